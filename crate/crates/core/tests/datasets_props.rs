use gtsim::datasets::{parse_libsvm, split_uniform, LabeledDataset, Sample};
use proptest::prelude::*;

fn sample() -> impl Strategy<Value = Sample> {
    (
        prop::bool::ANY,
        prop::collection::btree_map(0usize..30, -1e3f64..1e3, 0..8),
    )
        .prop_map(|(pos, feats)| Sample {
            label: if pos { 1.0 } else { -1.0 },
            features: feats.into_iter().collect(),
        })
}

fn dataset() -> impl Strategy<Value = LabeledDataset> {
    prop::collection::vec(sample(), 1..60).prop_map(|rows| {
        let d = rows
            .iter()
            .filter_map(|r| r.features.last().map(|&(k, _)| k + 1))
            .max()
            .unwrap_or(0);
        LabeledDataset::new(rows, d).unwrap()
    })
}

fn canonical(rows: &[Sample]) -> Vec<String> {
    let mut v: Vec<String> = rows.iter().map(|r| format!("{r:?}")).collect();
    v.sort();
    v
}

proptest! {
    #[test]
    fn libsvm_text_round_trips(ds in dataset()) {
        let back = parse_libsvm(ds.to_libsvm().as_bytes()).unwrap();
        prop_assert_eq!(back.rows(), ds.rows());
        prop_assert_eq!(back.d(), ds.d());
    }

    #[test]
    fn split_conserves_samples(ds in dataset(), n in 1usize..10, seed in any::<u64>()) {
        prop_assume!(n <= ds.m());
        let parts = split_uniform(&ds, n, seed).unwrap();
        prop_assert_eq!(parts.len(), n);
        let sizes: Vec<usize> = parts.iter().map(|p| p.m()).collect();
        prop_assert_eq!(sizes.iter().sum::<usize>(), ds.m());
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        prop_assert!(sizes.windows(2).all(|w| w[0] >= w[1]));
        let all: Vec<Sample> = parts.iter().flat_map(|p| p.rows().iter().cloned()).collect();
        prop_assert_eq!(canonical(&all), canonical(ds.rows()));
        prop_assert!(parts.iter().all(|p| p.d() == ds.d()));
    }
}

#[test]
fn too_many_agents_is_an_error() {
    let ds = parse_libsvm("+1 1:1\n-1 2:1\n".as_bytes()).unwrap();
    assert!(split_uniform(&ds, 3, 0).is_err());
}
