//! Criterion benchmarks for exact inference: polynomial against padded
//! pipelines across horizons.

use criterion::{BenchmarkId, Criterion, Throughput};
use maxent_irl::envs::{make_gridworld, make_random_mdp, random_params, GridSpec, FROZEN_LAKE_SLIP};
use maxent_irl::experiments::{expert_demos, Algorithm};
use maxent_irl::{ExactModel, FeatureSet, Mdp, OptimizerConfig, RewardParams, RewardTables, Variant};

pub const HORIZONS: [usize; 4] = [10, 20, 40, 80];

/// Benchmark problems: the 4x4 and 8x8 lakes and a 30-state random MDP.
pub fn problems() -> Vec<(&'static str, Mdp, FeatureSet, RewardParams)> {
    let lake = |spec: GridSpec| {
        let (mdp, feats, _) = make_gridworld(&spec).expect("pinned layout");
        let params = random_params(&feats, 1.0, 0);
        (mdp, feats, params)
    };
    let (m4, f4, p4) = lake(GridSpec::frozen_lake_4x4(FROZEN_LAKE_SLIP));
    let (m8, f8, p8) = lake(GridSpec::frozen_lake_8x8(FROZEN_LAKE_SLIP));
    let random = make_random_mdp(30, 4, 3, 0).expect("valid sizes");
    let rf = FeatureSet::state_indicators(30, 4);
    let rp = random_params(&rf, 1.0, 0);
    vec![("lake4", m4, f4, p4), ("lake8", m8, f8, p8), ("random30", random, rf, rp)]
}

fn variant_name(v: Variant) -> &'static str {
    match v {
        Variant::Poly => "poly",
        Variant::Padded => "padded",
    }
}

/// Marginals plus feature expectations, the per-iteration cost of learning.
pub fn bench_marginals(c: &mut Criterion) {
    for (name, mdp, feats, params) in problems() {
        let mut group = c.benchmark_group(format!("marginals/{name}"));
        group.sample_size(10);
        for len in HORIZONS {
            group.throughput(Throughput::Elements(len as u64));
            for variant in [Variant::Padded, Variant::Poly] {
                let model = ExactModel::new(&mdp, &feats, len, variant).expect("valid horizon");
                group.bench_with_input(BenchmarkId::new(variant_name(variant), len), &len, |b, _| {
                    b.iter(|| {
                        let m = model.marginals(&params).expect("finite");
                        m.feature_expectations(&feats, mdp.discount())
                    })
                });
            }
        }
        group.finish();
    }
}

/// Full learning runs on expert demonstrations from the 4x4 lake.
pub fn bench_learning(c: &mut Criterion) {
    let (mdp, feats, gt) = make_gridworld(&GridSpec::frozen_lake_4x4(FROZEN_LAKE_SLIP)).expect("pinned layout");
    let tables = RewardTables::from_params(&feats, &gt).expect("matching dims");
    let data = expert_demos(&mdp, &tables, 20, 30, false, 0).expect("rollouts");
    let cfg = OptimizerConfig { max_iters: 50, ..Default::default() };
    let mut group = c.benchmark_group("learn/lake4");
    group.sample_size(10);
    for alg in [Algorithm::ExactPadded, Algorithm::ExactPoly, Algorithm::Ziebart2008] {
        group.bench_function(alg.name(), |b| {
            b.iter(|| alg.learn(&mdp, &feats, &data, Some(30), 0, &cfg).expect("learns"))
        });
    }
    group.finish();
}
