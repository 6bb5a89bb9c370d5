//! Bundled reference data: the drone grammar, its causal map, designer habits
//! and a demo design.

use crate::bayes::{causal_map_to_bayesnet, BayesNet, CausalMap};
use crate::grammar::walk::{DesignerHabit, HostPolicy, WalkConfig};
use crate::grammar::{parse_grammar, DesignSequence, Grammar, RuleApplication};

pub const DRONE_GRAMMAR: &str = include_str!("../fixtures/drone.sg");

pub const DRONE_CAUSAL_MAP: &str = include_str!("../fixtures/drone_causal_map.json");

pub const QUAD: &str = "4-motor Drone";
pub const TWIN: &str = "2-motor Drone";

pub fn drone_grammar() -> Grammar {
    parse_grammar(DRONE_GRAMMAR).expect("bundled drone grammar is valid")
}

pub fn drone_causal_map() -> CausalMap {
    serde_json::from_str(DRONE_CAUSAL_MAP).expect("bundled causal map parses")
}

pub fn drone_bayesnet() -> BayesNet {
    causal_map_to_bayesnet(&drone_causal_map()).expect("bundled causal map is a DAG")
}

fn habit(name: &str, priority: &[&str], extras: &[&str]) -> DesignerHabit {
    DesignerHabit {
        name: name.to_string(),
        priority: priority.iter().map(|s| s.to_string()).collect(),
        extras: extras.iter().map(|s| s.to_string()).collect(),
    }
}

/// Three synthetic designer personas.
pub fn drone_habits() -> Vec<DesignerHabit> {
    vec![
        habit(
            "frame-first",
            &["arm_quad", "arm_pair", "motor", "propeller", "skid", "camera_belly"],
            &["skid", "camera_belly"],
        ),
        habit(
            "rotor-by-rotor",
            &["arm_quad", "arm_pair", "propeller", "motor", "camera_top", "skid_arm"],
            &["camera_top", "skid_arm"],
        ),
        habit(
            "payload-first",
            &["camera_belly", "skid", "arm_quad", "arm_pair", "motor", "propeller"],
            &["camera_belly", "skid"],
        ),
    ]
}

/// Walk settings used for synthetic seed corpora. Personas follow their
/// priorities exactly; variety comes from the persona, extras and parameters.
pub fn drone_walk_config() -> WalkConfig {
    WalkConfig {
        habits: drone_habits(),
        host_policy: HostPolicy::Canonical,
        noise: 0.0,
        ..WalkConfig::default()
    }
}

/// A complete 4-motor drone: four arms, four motor/propeller pairs, a skid
/// and a belly camera.
pub fn demo_drone() -> DesignSequence {
    let mut apps = vec![RuleApplication::new("arm_quad", 0, vec![120.0])];
    for arm in 1..=4 {
        // the arms fill occurrences 1..=4; every later application adds one unit
        let motor = 4 + apps.len();
        apps.push(RuleApplication::new("motor", arm, vec![12.0, 30.0]));
        apps.push(RuleApplication::new("propeller", motor, vec![70.0, 3.0]));
    }
    apps.push(RuleApplication::new("skid", 0, vec![30.0, 40.0]));
    apps.push(RuleApplication::new("camera_belly", 0, vec![15.0]));
    DesignSequence {
        shape_type: QUAD.to_string(),
        applications: apps,
        author_tags: Vec::new(),
    }
}
