//! Scenario files, built-in scenarios and command-line overrides.

use std::f64::consts::{FRAC_PI_2, PI};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use crate::barrier::SafetyGeometry;
use crate::error::{Error, Result};
use crate::flatness::{ActuatorLimits, VehicleParams};
use crate::lindyn::{self, IntegratorState, Vec3};
use crate::pipeline::{ReferenceSpec, RetunePolicy, ScenarioConfig, VehicleSpec};

pub const BUILTIN_NAMES: [&str; 3] = ["static_formation", "spinning_formation", "two_quad_pass"];

/// Flight altitude of the built-in scenarios (world z points down).
pub const ALTITUDE: f64 = -0.8;

fn base(name: &str, vehicles: Vec<VehicleSpec>, duration: f64) -> ScenarioConfig {
    ScenarioConfig {
        name: name.to_string(),
        vehicles,
        geometry: SafetyGeometry::default(),
        poles: lindyn::DEFAULT_POLES,
        k_s: 0.0,
        alpha: None,
        dt: lindyn::DEFAULT_DT,
        duration,
        vehicle: VehicleParams::default(),
        limits: ActuatorLimits::default(),
        retune: RetunePolicy::default(),
    }
}

fn hover(x: f64, y: f64) -> VehicleSpec {
    VehicleSpec {
        reference: ReferenceSpec::Hover {
            position: Vec3::new(x, y, ALTITUDE),
        },
        initial: None,
    }
}

fn bezier(from: (f64, f64), to: (f64, f64), duration: f64) -> VehicleSpec {
    VehicleSpec {
        reference: ReferenceSpec::Bezier {
            from: Vec3::new(from.0, from.1, ALTITUDE),
            to: Vec3::new(to.0, to.1, ALTITUDE),
            duration,
        },
        initial: None,
    }
}

/// Q5 crosses a hovering diamond of Q1-Q4.
pub fn static_formation() -> ScenarioConfig {
    base(
        "static_formation",
        vec![
            hover(0.25, 0.0),
            hover(0.0, 0.25),
            hover(-0.25, 0.0),
            hover(0.0, -0.25),
            bezier((0.6, -0.6), (-0.6, 0.6), 4.0),
        ],
        12.0,
    )
}

/// Q5 crosses a ring of four vehicles spinning at pi/2 rad/s.
///
/// The ring starts at rest on the circle and spins up under tracking.
pub fn spinning_formation() -> ScenarioConfig {
    let ring = [-FRAC_PI_2, 0.0, FRAC_PI_2, PI].map(|phase| {
        let reference = ReferenceSpec::Circle {
            radius: 0.45,
            angular_rate: FRAC_PI_2,
            phase,
            z: ALTITUDE,
            center: Vec3::zeros(),
        };
        let start = reference.trajectory().eval(0.0)[0];
        VehicleSpec {
            reference,
            initial: Some(IntegratorState::at_rest(start)),
        }
    });
    let mut vehicles = ring.to_vec();
    vehicles.push(bezier((-0.9, -0.9), (0.9, 0.9), 5.0));
    base("spinning_formation", vehicles, 12.0)
}

/// Poles of the two-vehicle pass; the default set is too slow to finish
/// the unparameterized pass in 10 s.
pub const PASS_POLES: [f64; 4] = [10.0, 11.0, 12.0, 13.0];

/// Two vehicles swapping sides on head-on paths 0.2 m apart.
pub fn two_quad_pass() -> ScenarioConfig {
    let mut config = base(
        "two_quad_pass",
        vec![
            bezier((-1.2, 0.1), (1.2, 0.1), 2.0),
            bezier((1.2, -0.1), (-1.2, -0.1), 2.0),
        ],
        10.0,
    );
    config.poles = PASS_POLES;
    config
}

pub fn builtin(name: &str) -> Option<ScenarioConfig> {
    match name {
        "static_formation" => Some(static_formation()),
        "spinning_formation" => Some(spinning_formation()),
        "two_quad_pass" => Some(two_quad_pass()),
        _ => None,
    }
}

/// Seeded random team of `m` vehicles flying rest-to-rest Bezier legs.
///
/// Start and goal points are drawn in a 2 m x 2 m x 0.6 m box and rejected
/// until every pair starts with `h` at least that of a 0.4 m gap.
pub fn random_scenario(seed: u64, m: usize) -> ScenarioConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let geometry = SafetyGeometry::default();
    let min_gap: f64 = 0.4;
    let draw_points = |rng: &mut ChaCha8Rng| -> Vec<Vec3> {
        loop {
            let pts: Vec<Vec3> = (0..m)
                .map(|_| {
                    Vec3::new(
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        ALTITUDE + rng.gen_range(-0.3..0.3),
                    )
                })
                .collect();
            let ok = (0..m).all(|i| {
                (i + 1..m).all(|j| {
                    let a = IntegratorState::at_rest(pts[i]);
                    let b = IntegratorState::at_rest(pts[j]);
                    crate::barrier::barrier_value(&a, &b, &geometry)
                        >= min_gap.powi(4) - geometry.d_s.powi(4)
                })
            });
            if ok {
                return pts;
            }
        }
    };
    let starts = draw_points(&mut rng);
    let goals = draw_points(&mut rng);
    let vehicles = starts
        .iter()
        .zip(&goals)
        .map(|(from, to)| VehicleSpec {
            reference: ReferenceSpec::Bezier {
                from: *from,
                to: *to,
                duration: rng.gen_range(2.5..5.0),
            },
            initial: None,
        })
        .collect();
    let mut config = base(&format!("random_{seed}_{m}"), vehicles, 8.0);
    config.geometry = geometry;
    config
}

/// Parses and validates a scenario document.
pub fn from_json(text: &str) -> Result<ScenarioConfig> {
    let value: Value = serde_json::from_str(text).map_err(|e| Error::InvalidParameter {
        field: "<document>".into(),
        reason: e.to_string(),
    })?;
    from_value(value)
}

fn from_value(value: Value) -> Result<ScenarioConfig> {
    let config: ScenarioConfig = serde_json::from_value(value).map_err(|e| Error::InvalidParameter {
        field: "<document>".into(),
        reason: e.to_string(),
    })?;
    config.validate()?;
    Ok(config)
}

/// Resolves a built-in name or reads a scenario file.
pub fn load(name_or_path: &str) -> Result<ScenarioConfig> {
    if let Some(c) = builtin(name_or_path) {
        return Ok(c);
    }
    let path = Path::new(name_or_path);
    let text = std::fs::read_to_string(path).map_err(|e| Error::InvalidParameter {
        field: "--scenario".into(),
        reason: format!("{}: {e}", path.display()),
    })?;
    from_json(&text)
}

/// Short aliases accepted by `--set`.
fn canonical_key(key: &str) -> &str {
    match key {
        "ks" => "k_s",
        "D_s" | "ds" => "geometry.D_s",
        "c" => "geometry.c",
        "mass" => "vehicle.mass",
        "max_tilt" | "max_tilt_deg" => "limits.max_tilt_deg",
        "max_thrust" | "max_thrust_ratio" => "limits.max_thrust_ratio",
        other => other,
    }
}

/// Applies `key=value` overrides (dotted paths, JSON values) and
/// revalidates.
pub fn apply_overrides(config: &ScenarioConfig, overrides: &[String]) -> Result<ScenarioConfig> {
    let mut value = serde_json::to_value(config).expect("config serializes");
    for item in overrides {
        let (key, raw) = item.split_once('=').ok_or_else(|| Error::InvalidParameter {
            field: "--set".into(),
            reason: format!("expected key=value, got `{item}`"),
        })?;
        let key = canonical_key(key.trim());
        let parsed: Value = serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().into()));
        let mut slot = &mut value;
        for part in key.split('.') {
            let next = match slot {
                Value::Object(map) => {
                    if !map.contains_key(part) && (part == "alpha" || part == "initial") {
                        map.insert(part.to_string(), Value::Null);
                    }
                    map.get_mut(part)
                }
                Value::Array(items) => part.parse::<usize>().ok().and_then(|k| items.get_mut(k)),
                _ => None,
            };
            slot = next.ok_or_else(|| Error::InvalidParameter {
                field: key.to_string(),
                reason: "unknown override key".into(),
            })?;
        }
        *slot = parsed;
    }
    from_value(value)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_validate() {
        for name in BUILTIN_NAMES {
            let c = builtin(name).unwrap();
            c.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(c.dt, 0.02);
            assert_eq!(c.geometry.d_s, 0.25);
        }
    }

    #[test]
    fn random_scenarios_are_reproducible_and_valid() {
        for seed in 0..10 {
            let a = random_scenario(seed, 5);
            assert_eq!(a, random_scenario(seed, 5));
            a.validate().unwrap();
        }
    }

    #[test]
    fn overrides() {
        let c = apply_overrides(&two_quad_pass(), &["ks=100".into(), "geometry.c=3".into()]).unwrap();
        assert_eq!(c.k_s, 100.0);
        assert_eq!(c.geometry.c, 3.0);
        let c = apply_overrides(&c, &["alpha=50".into()]).unwrap();
        assert_eq!(c.alpha, Some(50.0));
        let err = apply_overrides(&c, &["D_s=-1".into()]).unwrap_err();
        assert!(err.to_string().contains("geometry.D_s"), "{err}");
        assert!(apply_overrides(&c, &["nope=1".into()]).is_err());
        assert!(apply_overrides(&c, &["ks".into()]).is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        let mut v = serde_json::to_value(two_quad_pass()).unwrap();
        v["geometry"]["extra"] = Value::from(1);
        let err = from_json(&v.to_string()).unwrap_err();
        assert!(err.to_string().contains("extra"), "{err}");
    }

    #[test]
    fn json_round_trip() {
        let c = spinning_formation();
        let text = serde_json::to_string_pretty(&c).unwrap();
        assert_eq!(from_json(&text).unwrap(), c);
    }
}
