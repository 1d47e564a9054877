use reid_core::data_io::{Kind, Split};
use reid_core::simulator::{generate, SimSpec};

fn spec(rho: f64, shift: f64, seed: u64) -> SimSpec {
    SimSpec {
        n_identities: 50,
        items_per_identity: 20,
        dim: 32,
        sigma_base: 0.15,
        rho,
        shift_magnitude: shift,
        sigma_refinement: 0.15,
        seed,
        queries_per_identity: 1,
    }
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| f64::from(*x) * f64::from(*y))
        .sum()
}

/// Per-identity mean of `set`, renormalized.
fn centroids(set: &reid_core::EmbeddingSet, s: &SimSpec) -> Vec<Vec<f32>> {
    (0..s.n_identities)
        .map(|i| {
            let mut c = vec![0.0f32; s.dim];
            for j in 0..s.items_per_identity {
                for (a, v) in c.iter_mut().zip(set.row(i * s.items_per_identity + j)) {
                    *a += v;
                }
            }
            let n = c.iter().map(|v| v * v).sum::<f32>().sqrt();
            c.iter().map(|v| v / n).collect()
        })
        .collect()
}

#[test]
fn same_seed_same_bytes() {
    let a = generate(&spec(0.3, 1.0, 9)).unwrap();
    let b = generate(&spec(0.3, 1.0, 9)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.base, generate(&spec(0.3, 1.0, 10)).unwrap().base);
}

#[test]
fn manifest_layout() {
    let s = spec(0.3, 1.0, 1);
    let d = generate(&s).unwrap();
    let n = s.n_identities * s.items_per_identity;
    assert_eq!(d.manifest.len(), 4 * n);
    let queries = d
        .manifest
        .records()
        .iter()
        .filter(|r| r.kind == Kind::Base && r.split == Split::Query)
        .count();
    assert_eq!(queries, s.n_identities);
    assert!(d.base.is_normalized() && d.refinements.iter().all(|r| r.is_normalized()));
}

#[test]
fn full_fidelity_refinements_sit_as_close_to_identity_as_base() {
    let s = spec(1.0, 0.0, 3);
    let d = generate(&s).unwrap();
    let n = s.n_identities * s.items_per_identity;
    // Each channel is scored against its own centroid estimate so both carry the same in-sample bias.
    let mean = |set: &reid_core::EmbeddingSet| {
        let c = centroids(set, &s);
        (0..n)
            .map(|i| dot(set.row(i), &c[i / s.items_per_identity]))
            .sum::<f64>()
            / n as f64
    };
    let base = mean(&d.base);
    for r in &d.refinements {
        assert!(
            (mean(r) - base).abs() < 0.02,
            "base {base} refinement {}",
            mean(r)
        );
    }
}

#[test]
fn zero_fidelity_refinements_carry_no_identity() {
    let s = spec(0.0, 1.0, 4);
    let d = generate(&s).unwrap();
    let c = centroids(&d.base, &s);
    let n = s.n_identities * s.items_per_identity;
    for r in &d.refinements {
        let own = (0..n)
            .map(|i| dot(r.row(i), &c[i / s.items_per_identity]))
            .sum::<f64>()
            / n as f64;
        // Average over every other identity stands in for a random centroid.
        let other = (0..n)
            .map(|i| {
                let me = i / s.items_per_identity;
                (0..s.n_identities)
                    .filter(|&k| k != me)
                    .map(|k| dot(r.row(i), &c[k]))
                    .sum::<f64>()
                    / (s.n_identities - 1) as f64
            })
            .sum::<f64>()
            / n as f64;
        assert!(own < other + 0.05, "own {own} other {other}");
    }
}

#[test]
fn rejects_unsplittable_layouts() {
    let mut s = spec(0.5, 1.0, 1);
    s.items_per_identity = 1;
    assert_eq!(generate(&s).unwrap_err().category(), "invalid_param");
}
