use photoseq_core::*;

#[test]
fn defaults_match_the_reference_values() {
    let c = ToolkitConfig::default();
    assert_eq!((c.loss.lambda_sum, c.loss.lambda_perc, c.loss.lambda_adv, c.loss.lambda_grad), (1e-2, 3e-4, 1e-4, 1e-4));
    let s = &c.schedule;
    assert_eq!((s.total_iterations, s.initial_lr, s.lr_decay_factor, s.lr_decay_every), (100_000, 1e-4, 0.1, 25_000));
    assert_eq!((c.builder.n_min, c.builder.n_max), (11, 39));
    assert_eq!(c.builder.variance_to_n.iter().map(|s| s.1).collect::<Vec<_>>(), vec![11, 17, 23, 31, 39]);
    assert_eq!(c.network, NetworkConfig::default());
    assert_eq!(c.network.trunk_channels[0], 64);
    assert_eq!(c.training.perceptual_layer, "conv5_4");
    assert_eq!(c.evaluation.n, 11);
    assert_eq!(c.evaluation.blur_sweep, vec![9, 11, 15, 19]);
    assert!(c.noise.is_noise_free());
    c.validate().unwrap();
    assert_eq!(ToolkitConfig::parse("").unwrap(), c);
}

#[test]
fn round_trips_through_text() {
    let text = "[schedule]\ntotal_iterations = 20000\nlr_decay_every = 5000\n\n[noise]\nalpha = 0.01\nbeta = 0.0005\n";
    let c = ToolkitConfig::parse(text).unwrap();
    assert_eq!(c.schedule.total_iterations, 20_000);
    assert_eq!(c.schedule.initial_lr, 1e-4);
    assert_eq!(c.noise.alpha, 0.01);
    assert_eq!(ToolkitConfig::parse(&c.to_toml()).unwrap(), c);
    assert_eq!(c.to_json()["schedule"]["lr_decay_every"], 5000);
}

#[test]
fn unknown_keys_are_rejected_in_every_table() {
    for table in ["corpus", "builder", "noise", "network", "loss", "schedule", "training", "sequencer", "evaluation"] {
        let extra = if table == "noise" { "alpha = 0.0\nbeta = 0.0\n" } else { "" };
        let text = format!("[{table}]\n{extra}not_a_key = 1\n");
        assert!(matches!(ToolkitConfig::parse(&text), Err(Error::Config(_))), "{table}");
    }
    assert!(matches!(ToolkitConfig::parse("[mystery]\nx = 1\n"), Err(Error::Config(_))));
}

#[test]
fn invalid_values_are_config_errors() {
    for text in [
        "[schedule]\nlr_decay_every = 200000\n",
        "[loss]\nlambda_sum = -1.0\n",
        "[builder]\ncrop_size = 20\n",
        "[noise]\nalpha = -0.1\nbeta = 0.0\n",
        "[network]\nleaky_slope = -0.5\n",
        "[training]\nperceptual_layer = \"conv9_9\"\n",
        "[sequencer]\nlevels = 0\n",
        "[evaluation]\nn = 10\n",
        "[evaluation]\nblur_sweep = [9, 12]\n",
        "[corpus]\nnominal_fps = 0.0\n",
        "schedule = 3\n",
    ] {
        assert!(matches!(ToolkitConfig::parse(text), Err(Error::Config(_))), "{text}");
    }
}
