use maskforge::evaluate::ExperimentReport;
use maskforge::synth::SynthSpec;
use maskforge::PipelineConfig;
use maskforge_service::workspace::{evolve, init, simulate, simulation_dir, Layout};

#[test]
fn zero_collection_condition_matches_a_plain_simulation() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = SynthSpec::evolvability(3);
    spec.sets.iter_mut().for_each(|s| s.images = 6);
    let manifest = spec.generate(&dir.path().join("data")).unwrap();
    let layout = Layout::new(dir.path().join("ws"));
    let cfg = PipelineConfig::default();
    init(&manifest, layout.root(), &cfg).unwrap();

    let report = evolve(&layout, "target", &cfg).unwrap();
    assert_eq!(report.splits.verify.len(), 4);
    assert_eq!(report.conditions.len(), 3);
    assert!(layout.reports_dir().join("evolvability-target.json").exists());

    simulate(&layout, &["target".to_string()], false, &cfg).unwrap();
    let path = simulation_dir(&layout, false).join("target.json");
    let plain: ExperimentReport = serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap();
    let zero = &report.conditions[0];
    assert!(!zero.condition.flip_dict_enabled);
    for row in &zero.per_image {
        let same = plain.per_image.iter().find(|r| r.image_id == row.image_id).unwrap();
        assert_eq!(same, row);
    }
}
