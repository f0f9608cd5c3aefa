use irl_bench::{problems, HORIZONS};
use maxent_irl::{ExactModel, Variant};

#[test]
fn problem_sizes_are_pinned() {
    let sizes: Vec<(&str, usize, usize)> =
        problems().iter().map(|(n, m, _, _)| (*n, m.num_states(), m.num_actions())).collect();
    assert_eq!(sizes, [("lake4", 16, 4), ("lake8", 64, 4), ("random30", 30, 4)]);
}

#[test]
fn benchmarked_horizons_build() {
    let (_, mdp, feats, params) = problems().remove(0);
    for len in HORIZONS {
        let m = ExactModel::new(&mdp, &feats, len, Variant::Padded).unwrap().marginals(&params).unwrap();
        assert!(m.log_z.is_finite());
    }
}
