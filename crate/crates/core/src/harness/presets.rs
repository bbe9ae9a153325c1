//! The six ablation configurations at desk scale.
//!
//! All presets share one stiff noisy objective, `N = 8`, `S = 20000`,
//! `T = 100` and the same controller constants; they differ only in the
//! spread, weight averaging, warm start, auto-LR and peak learning rate.

use serde_json::{json, Value};

use super::HarnessError;

pub struct Preset {
    pub name: &'static str,
    pub summary: &'static str,
}

pub const PRESETS: [Preset; 6] = [
    Preset { name: "baseline-low", summary: "no spread, low peak LR (conservative reference)" },
    Preset { name: "baseline-high", summary: "no spread, high peak LR" },
    Preset { name: "warm-init", summary: "high peak LR from a noisy warm start, no averaging" },
    Preset { name: "hdet-no-autolr", summary: "spread + averaging + warm start, controller off" },
    Preset { name: "hdet-no-warm-init", summary: "spread + averaging + controller, cold start" },
    Preset { name: "hdet-full", summary: "spread + averaging + warm start + controller" },
];

pub const HIGH_LR: f64 = 0.0009;
pub const LOW_LR: f64 = 0.0001;

fn base() -> Value {
    json!({
        "objective": {
            "kind": "stiff_valley",
            "slow_dim": 8,
            "slow_curvature": 0.2,
            "stiff_dim": 8,
            "stiff_curvature": 2500.0,
            "coupling": 1.0,
            "saturation": 0.5,
            "noise": 0.3,
            "init_slow": 1.0,
            "init_stiff": 0.02,
            "groups": ["embedding", "transformer"]
        },
        "world_size": 8,
        "total_steps": 20000,
        "sync_interval": 100,
        "alpha": 0.0,
        "averaging": false,
        "one_cycle": {
            "eta_max": HIGH_LR,
            "div_factor": 25.0,
            "final_div_factor": 5.0,
            "warmup_fraction": 0.3
        },
        "auto_lr": {
            "enabled": false,
            "beta": 0.9,
            "sigma": 0.1,
            "lambda": 0.5,
            "warmup_steps": 2000
        },
        "warm_init": {
            "enabled": false,
            "nu": 0.01,
            "pretrain_steps": 100000,
            "pretrain_lr": 0.0001
        },
        "seed": 0
    })
}

/// Config document for a preset, before user overrides.
pub fn preset(name: &str) -> Result<Value, HarnessError> {
    let mut v = base();
    let spread = 1.0 / 9.0;
    match name {
        "baseline-low" => v["one_cycle"]["eta_max"] = json!(LOW_LR),
        "baseline-high" => {}
        "warm-init" => v["warm_init"]["enabled"] = json!(true),
        "hdet-no-autolr" => {
            v["alpha"] = json!(spread);
            v["averaging"] = json!(true);
            v["warm_init"]["enabled"] = json!(true);
        }
        "hdet-no-warm-init" => {
            v["alpha"] = json!(spread);
            v["averaging"] = json!(true);
            v["auto_lr"]["enabled"] = json!(true);
        }
        "hdet-full" => {
            v["alpha"] = json!(spread);
            v["averaging"] = json!(true);
            v["warm_init"]["enabled"] = json!(true);
            v["auto_lr"]["enabled"] = json!(true);
        }
        _ => {
            return Err(HarnessError::UnknownPreset {
                name: name.to_owned(),
                known: PRESETS.iter().map(|p| p.name).collect::<Vec<_>>().join(", "),
            })
        }
    }
    Ok(v)
}
