#![allow(dead_code)]

use artikin_core::geometry::{Pose, Vec3};
use proptest::prelude::*;

pub fn arb_vec3(scale: f64) -> impl Strategy<Value = Vec3> {
    (-scale..scale, -scale..scale, -scale..scale).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

pub fn arb_unit() -> impl Strategy<Value = Vec3> {
    arb_vec3(1.0)
        .prop_filter("non-zero", |v| v.norm() > 0.1)
        .prop_map(|v| v.normalize())
}

pub fn arb_pose() -> impl Strategy<Value = Pose> {
    (arb_unit(), -3.1..3.1f64, arb_vec3(2.0)).prop_map(|(axis, angle, t)| {
        Pose::from_translation(t).compose(&Pose::from_axis_angle(&axis, angle))
    })
}

pub fn poses_close(a: &Pose, b: &Pose, tol: f64) -> bool {
    let (dt, dr) = a.distance_to(b);
    dt <= tol && dr <= tol
}

use artikin_core::grounding::{AnnotatedSentence, Phrase, Symbol};

const TOY: &[(&str, &str, (&str, &str))] = &[
    ("slide the drawer open", "prismatic", ("drawer", "cabinet")),
    ("slide the drawer shut", "prismatic", ("drawer", "cabinet")),
    ("pull the drawer out", "prismatic", ("drawer", "cabinet")),
    ("push the drawer in", "prismatic", ("drawer", "cabinet")),
    ("the drawer slides out of the cabinet", "prismatic", ("drawer", "cabinet")),
    ("slide it along the rail", "prismatic", ("drawer", "cabinet")),
    ("pull the handle to slide the drawer", "prismatic", ("drawer", "cabinet")),
    ("swing the door open", "rotational", ("door", "wall")),
    ("swing the door shut", "rotational", ("door", "wall")),
    ("rotate the door on its hinge", "rotational", ("door", "wall")),
    ("the door turns about the hinge", "rotational", ("door", "wall")),
    ("turn the door", "rotational", ("door", "wall")),
    ("spin the seat around", "rotational", ("seat", "column")),
    ("rotate the seat", "rotational", ("seat", "column")),
    ("the seat swings around the column", "rotational", ("seat", "column")),
    ("the monitor is fixed to the desk", "rigid", ("monitor", "desk")),
    ("the monitor does not move", "rigid", ("monitor", "desk")),
    ("the monitor is attached to the desk", "rigid", ("desk", "monitor")),
    ("the column is bolted to the base", "rigid", ("column", "base")),
    ("the column stays fixed", "rigid", ("column", "base")),
];

/// Twenty single-phrase sentences. Each annotates every relation and the
/// three affordances of its pair, true only for the described joint type.
pub fn toy_corpus() -> Vec<AnnotatedSentence> {
    TOY.iter()
        .map(|(text, rel, (a, b))| {
            let mut ann = Vec::new();
            for r in ["prismatic", "rotational", "rigid"] {
                ann.push((Symbol::Relation(r.into()), r == *rel));
                ann.push((Symbol::parse(&format!("affordance({a},{b},{r})")).unwrap(), r == *rel));
            }
            AnnotatedSentence::flat(text, ann)
        })
        .collect()
}

/// "slide the drawer" with a child phrase over "the drawer".
pub fn nested_sentence() -> AnnotatedSentence {
    let tokens: Vec<String> = ["slide", "the", "drawer"].iter().map(|s| s.to_string()).collect();
    AnnotatedSentence {
        tokens,
        phrases: vec![
            Phrase {
                span: (0, 3),
                children: vec![1],
                annotations: vec![(Symbol::Relation("prismatic".into()), true)],
            },
            Phrase {
                span: (1, 3),
                children: vec![],
                annotations: vec![(Symbol::Object("drawer".into()), true), (Symbol::Object("door".into()), false)],
            },
        ],
    }
}
