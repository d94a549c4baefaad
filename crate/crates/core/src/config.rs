//! Line-oriented PV fleet configuration.
//!
//! ```text
//! # global settings
//! epsilon = 0.05
//! sigma_frac = 0.1
//! sigma_mode = std        # or: variance
//! units = mw              # or: pu
//! # one inverter per line; s, p, q, headroom, p_lo, p_hi in MVA/MW/MVAr unless units = pu
//! pv node=5 s=0.5 p=0.3 pf=0.9 kp=1 kq=1 headroom=0.1
//! ```
//!
//! Per-inverter keys: `node`, `s`, `p` (required); `q`, `pf`, `k` (sets both
//! droops), `kp`, `kq`, `headroom`, `sigma` (fraction), `p_lo`, `p_hi`, `eps`.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::netmodel::BusId;
use crate::policies::InverterSpec;
use crate::uncertainty::{PvForecast, SigmaMode, UncertaintyModel};

#[derive(Debug, Error, PartialEq)]
#[error("line {line}: {msg}")]
pub struct ConfigError {
    pub line: usize,
    pub msg: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PvConfig {
    pub specs: Vec<InverterSpec>,
    pub model: UncertaintyModel,
    pub sigma_frac: f64,
    pub sigma_mode: SigmaMode,
}

impl PvConfig {
    pub fn nodes(&self) -> Vec<BusId> {
        self.specs.iter().map(|s| s.node).collect()
    }
}

fn err(line: usize, msg: impl Into<String>) -> ConfigError {
    ConfigError { line, msg: msg.into() }
}

fn number(line: usize, key: &str, v: &str) -> Result<f64, ConfigError> {
    let x: f64 = v.parse().map_err(|_| err(line, format!("{key}: not a number: {v:?}")))?;
    if !x.is_finite() {
        return Err(err(line, format!("{key}: not finite")));
    }
    Ok(x)
}

struct PvLine {
    line: usize,
    fields: BTreeMap<String, String>,
}

/// Parses a fleet description; power quantities are divided by `base_mva`
/// unless `units = pu`.
pub fn parse_pv_config(text: &str, base_mva: f64) -> Result<PvConfig, ConfigError> {
    let mut epsilon = 0.05;
    let mut sigma_frac = 0.1;
    let mut sigma_mode = SigmaMode::StdFraction;
    let mut scale = 1.0 / base_mva;
    let mut pv_lines = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        if let Some(rest) = body.strip_prefix("pv ").or_else(|| (body == "pv").then_some("")) {
            let mut fields = BTreeMap::new();
            for tok in rest.split_whitespace() {
                let (k, v) = tok.split_once('=').ok_or_else(|| err(line, format!("expected key=value, got {tok:?}")))?;
                if fields.insert(k.to_string(), v.to_string()).is_some() {
                    return Err(err(line, format!("duplicate key {k}")));
                }
            }
            pv_lines.push(PvLine { line, fields });
            continue;
        }
        let (k, v) = body.split_once('=').ok_or_else(|| err(line, format!("expected key = value, got {body:?}")))?;
        let (k, v) = (k.trim(), v.trim());
        match k {
            "epsilon" => epsilon = number(line, k, v)?,
            "sigma_frac" => sigma_frac = number(line, k, v)?,
            "sigma_mode" => {
                sigma_mode = match v {
                    "std" => SigmaMode::StdFraction,
                    "variance" => SigmaMode::VarianceFraction,
                    _ => return Err(err(line, format!("sigma_mode must be std or variance, got {v:?}"))),
                }
            }
            "units" => {
                scale = match v {
                    "mw" => 1.0 / base_mva,
                    "pu" => 1.0,
                    _ => return Err(err(line, format!("units must be mw or pu, got {v:?}"))),
                }
            }
            _ => return Err(err(line, format!("unknown setting {k:?}"))),
        }
    }
    if !(epsilon > 0.0 && epsilon < 0.5) {
        return Err(err(0, format!("epsilon {epsilon} outside (0, 0.5)")));
    }
    if sigma_frac < 0.0 {
        return Err(err(0, "sigma_frac must be nonnegative"));
    }

    let mut model = UncertaintyModel::new(epsilon);
    let mut specs = Vec::new();
    for pv in pv_lines {
        let line = pv.line;
        let mut f = pv.fields;
        let mut take = |key: &str| f.remove(key);
        let req = |v: Option<String>, key: &str| v.ok_or_else(|| err(line, format!("missing {key}")));
        let node: usize = req(take("node"), "node")?
            .parse()
            .map_err(|_| err(line, "node must be a positive integer"))?;
        if node == 0 {
            return Err(err(line, "node must be a positive integer"));
        }
        let node = BusId(node);
        let s = number(line, "s", &req(take("s"), "s")?)? * scale;
        let p = number(line, "p", &req(take("p"), "p")?)? * scale;
        let mut spec = InverterSpec::new(node, s, p);
        let mut opt = |key: &str| -> Result<Option<f64>, ConfigError> {
            take(key).map(|v| number(line, key, &v)).transpose()
        };
        if let Some(q) = opt("q")? {
            spec.q_ref = q * scale;
        }
        if let Some(pf) = opt("pf")? {
            spec.pf = pf;
        }
        if let Some(k) = opt("k")? {
            spec.droop_p = k;
            spec.droop_q = k;
        }
        if let Some(k) = opt("kp")? {
            spec.droop_p = k;
        }
        if let Some(k) = opt("kq")? {
            spec.droop_q = k;
        }
        if let Some(h) = opt("headroom")? {
            spec.p_headroom = h * scale;
        }
        let frac = opt("sigma")?.unwrap_or(sigma_frac);
        let lo = opt("p_lo")?.map(|v| v * scale).unwrap_or(0.0);
        let hi = opt("p_hi")?.map(|v| v * scale).unwrap_or(s);
        if let Some(e) = opt("eps")? {
            model.epsilon_overrides.insert(node, e);
        }
        if let Some(k) = f.keys().next() {
            return Err(err(line, format!("unknown key {k:?}")));
        }
        spec.validate().map_err(|e| err(line, e.to_string()))?;
        if specs.iter().any(|x: &InverterSpec| x.node == node) {
            return Err(err(line, format!("second inverter at bus {node}")));
        }
        model.insert(node, PvForecast { mean: p, sigma: sigma_mode.sigma(frac, p), lo, hi });
        specs.push(spec);
    }
    model.validate().map_err(|e| err(0, e.to_string()))?;
    Ok(PvConfig { specs, model, sigma_frac, sigma_mode })
}
