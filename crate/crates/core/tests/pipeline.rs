use qmpc::config::RunConfig;
use qmpc::forecaster::Forecaster;
use qmpc::mpc::ControllerKind;
use qmpc::pipeline;

fn small() -> RunConfig {
    let mut c = RunConfig::default();
    c.data.samples = 2000;
    c.forecaster.hidden_size = 16;
    c.forecaster.decoder_hidden = 8;
    c.forecaster.decoder_output_dim = 4;
    c.training.epochs = 3;
    c.campaign.replicates = 3;
    c.campaign.episode_length = 28;
    c.campaign.reference.dwell = 12;
    c
}

#[test]
fn checkpoint_round_trip_preserves_forecasts() {
    let c = small();
    let table = pipeline::generate_data(&c).unwrap();
    let trained = pipeline::train_model(&c, &table, |_| {}).unwrap();
    assert_eq!(trained.report.curve.len(), 3);
    assert!(trained.test_metrics.coverage > 0.0);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.qmpc");
    trained.model.save(&path).unwrap();
    let loaded = Forecaster::load(&path).unwrap();
    let data = pipeline::dataset(&c, &table).unwrap();
    let windows: Vec<_> = data.subset(&data.test[..20]).into_iter().cloned().collect();
    assert_eq!(
        trained.model.forecast_batch(&windows).unwrap(),
        loaded.forecast_batch(&windows).unwrap()
    );
}

#[test]
fn campaigns_are_independent_of_worker_count() {
    let mut c = small();
    let table = pipeline::generate_data(&c).unwrap();
    let model = pipeline::train_model(&c, &table, |_| {}).unwrap().model;
    for kind in ControllerKind::ALL {
        c.campaign.workers = 1;
        let (serial, traces) = pipeline::campaign(&c, kind, Some(&model)).unwrap();
        c.campaign.workers = 2;
        let (parallel, _) = pipeline::campaign(&c, kind, Some(&model)).unwrap();
        assert_eq!(
            serde_json::to_string(&serial).unwrap(),
            serde_json::to_string(&parallel).unwrap()
        );
        assert_eq!(serial.n_aborted, 0, "{kind:?}");
        assert!((0.0..=1.0).contains(&serial.failure_rate));
        assert_eq!(traces.len(), 3);
        assert!(traces.iter().all(|t| t.records.len() == 28));
    }
}
