//! Test-only oracles and generators: a dense LinDistFlow solve, random
//! feeders and programs, and a projected-gradient QP solver.

#![allow(dead_code)]

use feeder::distflow::InjectionSet;
use feeder::netmodel::{parse_dump, BusId, RadialNetwork};
use feeder::qpcore::QuadProgram;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Random radial feeder with `n` buses rooted at bus 1: every bus hangs off a
/// random lower-numbered bus.
pub fn random_feeder<R: Rng>(rng: &mut R, n: usize, r: (f64, f64), load_p: f64, load_q: f64) -> RadialNetwork {
    let mut txt = String::from("network root=1 base_mva=10 base_kv=12.66\nbus 1 p=0 q=0 vmin=1 vmax=1 vnom=1\n");
    for b in 2..=n {
        txt += &format!(
            "bus {b} p={} q={} vmin=0.9 vmax=1.1 vnom=1\n",
            rng.random_range(0.0..load_p),
            rng.random_range(0.0..load_q)
        );
    }
    for b in 2..=n {
        let parent = rng.random_range(1..b);
        txt += &format!("branch {parent} {b} r={} x={}\n", rng.random_range(r.0..r.1), rng.random_range(r.0..r.1));
    }
    parse_dump(&txt).expect("generated feeder parses")
}

/// Random injections at roughly half the non-root buses.
pub fn random_injections<R: Rng>(rng: &mut R, net: &RadialNetwork, scale: f64) -> InjectionSet {
    let mut inj = InjectionSet::new();
    for b in net.bus_ids().skip(1) {
        if rng.random_bool(0.5) {
            inj.set(b, rng.random_range(0.0..scale), rng.random_range(-scale..scale));
        }
    }
    inj
}

/// Solves the LinDistFlow equations as one dense linear system in
/// `(p_k, q_k, u_b)`; returns `(flow_p, flow_q, u)` indexed like the solver.
pub fn dense_lindistflow(net: &RadialNetwork, inj: &InjectionSet) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let m = net.branches().len();
    let n = net.n_buses();
    let dim = 2 * m + n;
    let mut a = DMatrix::<f64>::zeros(dim, dim);
    let mut rhs = DVector::<f64>::zeros(dim);
    let mut row = 0;
    for (k, br) in net.branches().iter().enumerate() {
        let j = br.to;
        let bus = net.bus(j);
        // p_k − Σ children p = P_j − p_j, same for q.
        a[(row, k)] = 1.0;
        a[(row + 1, m + k)] = 1.0;
        for (c, other) in net.branches().iter().enumerate() {
            if other.from == j {
                a[(row, c)] -= 1.0;
                a[(row + 1, m + c)] -= 1.0;
            }
        }
        rhs[row] = bus.load_p - inj.p(j);
        rhs[row + 1] = bus.load_q - inj.q(j);
        row += 2;
        // u_j − u_i + 2(R p + X q) = 0
        a[(row, 2 * m + j.index())] = 1.0;
        a[(row, 2 * m + br.from.index())] = -1.0;
        a[(row, k)] = 2.0 * br.r;
        a[(row, m + k)] = 2.0 * br.x;
        row += 1;
    }
    let root = net.root();
    a[(row, 2 * m + root.index())] = 1.0;
    rhs[row] = net.bus(root).v_nom.powi(2);
    let x = a.lu().solve(&rhs).expect("LinDistFlow system is nonsingular");
    (x.rows(0, m).iter().copied().collect(), x.rows(m, m).iter().copied().collect(), x.rows(2 * m, n).iter().copied().collect())
}

/// Random convex program with finite box bounds around a known feasible
/// point, optionally with inequality and equality rows through it.
pub fn random_qp<R: Rng>(rng: &mut R, dim: usize, with_rows: bool) -> QuadProgram {
    let mut prog = QuadProgram::new(dim);
    let rank = rng.random_range(0..=dim);
    let f = DMatrix::<f64>::from_fn(rank, dim, |_, _| rng.random_range(-1.0..1.0));
    prog.hessian = f.transpose() * f;
    for i in 0..dim {
        prog.linear[i] = rng.random_range(-2.0..2.0);
    }
    let x0: Vec<f64> = (0..dim).map(|_| rng.random_range(-0.5..0.5)).collect();
    for (i, &x) in x0.iter().enumerate() {
        prog.set_bounds(i, x - rng.random_range(0.1..1.5), x + rng.random_range(0.1..1.5));
    }
    if with_rows {
        for _ in 0..rng.random_range(0..=dim) {
            let a: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let ax: f64 = a.iter().zip(&x0).map(|(a, x)| a * x).sum();
            prog.add_ineq(a, ax + rng.random_range(0.0..0.5));
        }
        for _ in 0..rng.random_range(0..dim.min(3)) {
            let a: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let ax: f64 = a.iter().zip(&x0).map(|(a, x)| a * x).sum();
            prog.add_eq(a, ax);
        }
    }
    prog
}

/// Method of multipliers on the general rows with an accelerated projected
/// gradient inner loop on the box. Slow but independent of the active-set
/// solver. Returns the minimizer.
pub fn projected_gradient(prog: &QuadProgram) -> Vec<f64> {
    let n = prog.dim();
    let h = &prog.hessian;
    let c = &prog.linear;
    let rows_e: Vec<(DVector<f64>, f64)> = prog.eq.iter().map(|r| (DVector::from_column_slice(&r.coeffs), r.rhs)).collect();
    let rows_i: Vec<(DVector<f64>, f64)> = prog.ineq.iter().map(|r| (DVector::from_column_slice(&r.coeffs), r.rhs)).collect();
    let lam_h = h.clone().symmetric_eigenvalues().max().max(0.0);
    let row_norm: f64 = rows_e.iter().chain(&rows_i).map(|(a, _)| a.norm_squared()).sum();
    let project = |x: &mut DVector<f64>| {
        for i in 0..n {
            x[i] = x[i].clamp(prog.lower[i], prog.upper[i]);
        }
    };
    let mut rho = 10.0;
    let mut x = DVector::from_fn(n, |i, _| 0.5 * (prog.lower[i] + prog.upper[i]));
    let mut lam_e = vec![0.0; rows_e.len()];
    let mut lam_i = vec![0.0; rows_i.len()];
    let mut last_infeas = f64::INFINITY;
    for _outer in 0..400 {
        let step = 1.0 / (lam_h + rho * row_norm + 1e-12);
        let grad = |x: &DVector<f64>| {
            let mut g = h * x + c;
            for ((a, b), l) in rows_e.iter().zip(&lam_e) {
                g += a * (l + rho * (a.dot(x) - b));
            }
            for ((a, b), l) in rows_i.iter().zip(&lam_i) {
                g += a * (l + rho * (a.dot(x) - b)).max(0.0);
            }
            g
        };
        // FISTA with gradient-based restart; stops on the projected
        // gradient step.
        let mut y = x.clone();
        let mut t = 1.0f64;
        for _ in 0..500_000 {
            let g = grad(&y);
            let mut next = &y - &g * step;
            project(&mut next);
            if (&next - &y).amax() < 1e-15 {
                x = next;
                break;
            }
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            if g.dot(&(&next - &x)) > 0.0 {
                y = next.clone();
                t = 1.0;
            } else {
                y = &next + (&next - &x) * ((t - 1.0) / t_next);
                t = t_next;
            }
            x = next;
        }
        let mut infeas: f64 = 0.0;
        let mut dual_move: f64 = 0.0;
        for ((a, b), l) in rows_e.iter().zip(lam_e.iter_mut()) {
            let r = a.dot(&x) - b;
            *l += rho * r;
            infeas = infeas.max(r.abs());
            dual_move = dual_move.max((rho * r).abs());
        }
        for ((a, b), l) in rows_i.iter().zip(lam_i.iter_mut()) {
            let r = a.dot(&x) - b;
            let nl = (*l + rho * r).max(0.0);
            dual_move = dual_move.max((nl - *l).abs());
            *l = nl;
            infeas = infeas.max(r.max(0.0));
        }
        if infeas < 1e-12 && dual_move < 1e-10 {
            break;
        }
        if infeas > 0.25 * last_infeas && rho < 1e6 {
            rho *= 4.0;
        }
        last_infeas = infeas;
    }
    x.iter().copied().collect()
}

pub fn bus(i: usize) -> BusId {
    BusId(i)
}
