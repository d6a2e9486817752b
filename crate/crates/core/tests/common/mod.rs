#![allow(dead_code)]

use rand::Rng;

use huretex_core::sis::Attribute;
use huretex_core::{LayerKind, SequentialInformationSystem};

/// The eight-object table over (a1, a2, d).
pub const FIXTURE: [[&str; 3]; 8] = [
    ["x1", "y1", "0"],
    ["x1", "y1", "0"],
    ["x1", "y2", "1"],
    ["x2", "y1", "0"],
    ["x2", "y2", "1"],
    ["x2", "y2", "1"],
    ["x1", "y1", "1"],
    ["x2", "y2", "0"],
];

pub fn fixture_sis() -> SequentialInformationSystem {
    let attributes = vec![
        Attribute { name: "a1".into(), kind: LayerKind::Dense },
        Attribute { name: "a2".into(), kind: LayerKind::Dense },
        Attribute { name: "d".into(), kind: LayerKind::Output },
    ];
    let ids = (1..=8).map(|i| format!("u{i}")).collect();
    let rows: Vec<Vec<&str>> = FIXTURE.iter().map(|r| r.to_vec()).collect();
    SequentialInformationSystem::from_rows(attributes, vec!["0".into(), "1".into()], ids, &rows).unwrap()
}

/// `n` objects with uniform symbols; `sizes` holds each attribute's alphabet
/// size, the last one being the output.
pub fn random_sis<R: Rng>(rng: &mut R, n: usize, sizes: &[usize]) -> SequentialInformationSystem {
    let m = sizes.len();
    let attributes = (0..m)
        .map(|a| Attribute {
            name: format!("a{a}"),
            kind: if a + 1 == m { LayerKind::Output } else { LayerKind::Dense },
        })
        .collect();
    let classes: Vec<String> = (0..sizes[m - 1]).map(|c| format!("c{c}")).collect();
    let rows: Vec<Vec<String>> = (0..n)
        .map(|_| {
            sizes
                .iter()
                .enumerate()
                .map(|(a, &s)| {
                    let v = rng.gen_range(0..s);
                    if a + 1 == m {
                        format!("c{v}")
                    } else {
                        format!("v{v}")
                    }
                })
                .collect()
        })
        .collect();
    let ids = (0..n).map(|i| format!("o{i}")).collect();
    SequentialInformationSystem::from_rows(attributes, classes, ids, &rows).unwrap()
}
