use regionswap::{Error, RunConfig};

fn field_of(e: Error) -> String {
    match e {
        Error::Config { field, .. } => field,
        other => panic!("expected config error, got {other:?}"),
    }
}

#[test]
fn defaults_round_trip_through_toml() {
    let cfg = RunConfig::default();
    let text = cfg.to_toml_string();
    assert_eq!(RunConfig::from_toml_str(&text, "x").unwrap(), cfg);
}

#[test]
fn unknown_key_reports_line_and_column() {
    let text = "[network]\nbase_resolution = 64\n\n[train]\nstepz = 5\n";
    let e = RunConfig::from_toml_str(text, "run.toml").unwrap_err();
    let msg = e.to_string();
    assert!(field_of(e).starts_with("run.toml:5:"), "{msg}");
    assert!(msg.contains("stepz"), "{msg}");
}

#[test]
fn unknown_section_is_rejected() {
    let e = RunConfig::from_toml_str("[netwrk]\n", "c.toml").unwrap_err();
    assert!(field_of(e).starts_with("c.toml:1:"));
}

#[test]
fn semantic_errors_name_the_field() {
    let e = RunConfig::from_toml_str("[network]\nbase_resolution = 48\n", "c").unwrap_err();
    assert_eq!(field_of(e), "network.base_resolution");
    let e = RunConfig::from_toml_str("[loss]\nw_cc = -1.0\n", "c").unwrap_err();
    assert_eq!(field_of(e), "loss.w_cc");
    let e = RunConfig::from_toml_str("[train]\nk_interval = 0\n", "c").unwrap_err();
    assert_eq!(field_of(e), "train.k_interval");
}

#[test]
fn overrides_apply_after_the_file_in_order() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path().join("c.toml");
    std::fs::write(&p, "[train]\nsteps = 10\n[loss]\nlambda_style = 2.0\n[[data.roots]]\npath = \"imgs\"\n").unwrap();
    let cfg = RunConfig::load(
        Some(&p),
        &["train.steps=20".into(), "train.steps=30".into(), "serve.host=0.0.0.0".into(), "loss.w_ca=0.5".into()],
    )
    .unwrap();
    assert_eq!(cfg.train.steps, 30);
    assert_eq!(cfg.loss.lambda_style, 2.0);
    assert_eq!(cfg.loss.w_ca, 0.5);
    assert_eq!(cfg.serve.host, "0.0.0.0");
    assert_eq!(cfg.data.roots[0].path, d.path().join("imgs"));
}

#[test]
fn bad_overrides_are_config_errors() {
    assert_eq!(field_of(RunConfig::load(None, &["train.nope=1".into()]).unwrap_err()), "train.nope");
    assert_eq!(field_of(RunConfig::load(None, &["train.steps=abc".into()]).unwrap_err()), "train.steps");
    assert!(RunConfig::load(None, &["nonsense".into()]).is_err());
    assert!(RunConfig::load(None, &["train.steps.x=1".into()]).is_err());
    let e = RunConfig::load(None, &["network.reduction=3".into()]).unwrap_err();
    assert_eq!(field_of(e), "network.reduction");
}

#[test]
fn missing_file_is_config_error() {
    let e = RunConfig::load(Some(std::path::Path::new("/nonexistent/c.toml")), &[]).unwrap_err();
    assert!(matches!(e, Error::Config { .. }));
}

#[test]
fn seed_sets_every_seed() {
    let mut c = RunConfig::default();
    c.set_seed(42);
    assert_eq!((c.network.seed, c.train.seed), (42, 42));
}
