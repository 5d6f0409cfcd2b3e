mod common;

use manifold_ssl::dataset::make_split;
use manifold_ssl::evaluation::{run_experiment, GridPoint, MethodId, PreparedTraining, COMBINED};
use manifold_ssl::synth::Preset;

#[test]
fn report_structure_and_summary_consistency() {
    let (_dir, mut config) = common::preset_setup(Preset::MultimodalManifold, 5);
    config.experiment.repetitions = 2;
    let data = common::load_data(&config);
    let report = run_experiment(&config.experiment, &data, Some(1)).unwrap();

    let names = data.modality_names();
    assert_eq!(report.cells.len(), 2 * (names.len() * 3 + 2));
    for r in 0..2 {
        for m in &names {
            for method in [MethodId::Svm, MethodId::Lapsvm, MethodId::LapsvmLabeledOnly] {
                assert_eq!(report.cells.iter().filter(|c| c.repetition == r && &c.modality == m && c.method == method).count(), 1);
            }
        }
        for method in [MethodId::StackedSvm, MethodId::StackedLapsvm] {
            assert_eq!(report.cells.iter().filter(|c| c.repetition == r && c.modality == COMBINED && c.method == method).count(), 1);
        }
    }
    assert!(report.cells.iter().all(|c| c.accuracy.is_some_and(|a| (0.0..=1.0).contains(&a))));

    for row in &report.summary {
        let values: Vec<f64> = report
            .cells
            .iter()
            .filter(|c| c.modality == row.modality && c.method == row.method)
            .filter_map(|c| c.accuracy)
            .collect();
        let (m, s) = common::mean_std(&values);
        assert_eq!(row.n, values.len());
        assert!((row.mean - m).abs() <= 1e-12 && (row.std - s).abs() <= 1e-12);
    }
    // Two repetitions are too few for a paired test.
    assert!(report.p_values.iter().all(|p| p.p_value.is_none()));
}

#[test]
fn reports_do_not_depend_on_thread_count() {
    let (_dir, mut config) = common::preset_setup(Preset::MultimodalManifold, 6);
    config.experiment.repetitions = 3;
    let data = common::load_data(&config);
    let csv = |threads| {
        let report = run_experiment(&config.experiment, &data, Some(threads)).unwrap();
        let mut out = Vec::new();
        report.write_raw_csv(&mut out).unwrap();
        out
    };
    assert_eq!(csv(1), csv(3));
}

#[test]
fn graph_node_sets_follow_the_method() {
    let (_dir, config) = common::preset_setup(Preset::MultimodalManifold, 7);
    let data = common::load_data(&config);
    let plan = make_split(&data.assignment, 0, 0.15, 5).unwrap();
    let ids = data.assignment.sample_ids();
    let index = |id: &String| ids.iter().position(|x| x == id).unwrap();
    let train: Vec<usize> = plan.training_ids(0).iter().map(index).collect();
    let unlabeled: Vec<usize> = plan.unlabeled_ids.iter().map(index).collect();
    let labels: Vec<f64> = train.iter().map(|&r| data.assignment.labels[r].1.sign().unwrap()).collect();
    let point = GridPoint { feature_count: 4, gamma_ambient: 0.01, gamma_intrinsic: 0.01, bandwidth: None };
    let values = &data.modalities[0].values;
    let settings = &config.experiment.settings;

    let nodes = |method| {
        let mut prep = PreparedTraining::new(values, &train, &labels, &unlabeled, method, 8, settings).unwrap();
        prep.fit(&point).unwrap().graph_nodes
    };
    assert_eq!(nodes(MethodId::Lapsvm), train.len() + unlabeled.len());
    assert_eq!(nodes(MethodId::LapsvmLabeledOnly), train.len());
    assert_eq!(nodes(MethodId::Svm), 0);
}

#[test]
fn unlabeled_samples_help_on_manifold_data() {
    let (_dir, mut config) = common::preset_setup(Preset::MultimodalManifold, 1);
    config.experiment.repetitions = 20;
    config.experiment.methods = vec![MethodId::Svm, MethodId::Lapsvm, MethodId::LapsvmLabeledOnly];
    let data = common::load_data(&config);
    let report = run_experiment(&config.experiment, &data, None).unwrap();
    for m in data.modality_names() {
        let med = |method| common::median(&report.accuracies(&m, method));
        let (svm, lap, lap_l) = (med(MethodId::Svm), med(MethodId::Lapsvm), med(MethodId::LapsvmLabeledOnly));
        assert!(lap >= svm && lap >= lap_l, "{m}: svm {svm} lapsvm {lap} lapsvm_L {lap_l}");
    }
}
