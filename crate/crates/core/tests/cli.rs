use std::fs;
use std::path::{Path, PathBuf};

use fedae::cli::{
    self, main_with_args, ExperimentConfig, EXIT_CONFIG, EXIT_IO, EXIT_OK, EXIT_PROTOCOL,
    EXIT_THRESHOLD,
};
use fedae::codec::WeightDataset;
use fedae::data;
use tempfile::TempDir;

fn quick() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/configs/quick.json")
}

fn run(args: &[&str]) -> i32 {
    main_with_args(std::iter::once("fedae").chain(args.iter().copied()))
}

fn run_in(config: &Path, out: &Path, args: &[&str]) -> i32 {
    let mut all = vec![
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];
    all.extend_from_slice(args);
    run(&all)
}

fn write_config(dir: &Path, edit: impl FnOnce(&mut serde_json::Value)) -> PathBuf {
    let mut v: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(quick()).unwrap()).unwrap();
    edit(&mut v);
    let path = dir.join("config.json");
    fs::write(&path, v.to_string()).unwrap();
    path
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(run(&["--help"]), EXIT_OK);
    assert_eq!(run(&["no-such-command"]), EXIT_CONFIG);
    assert_eq!(run(&["gen-data"]), EXIT_CONFIG, "config is required");
}

#[test]
fn unknown_config_key_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), |v| v["federated"]["colaborators"] = 2.into());
    assert_eq!(run_in(&cfg, tmp.path(), &["gen-data"]), EXIT_CONFIG);
    let cfg = write_config(tmp.path(), |v| {
        v["model"]["layers"] = serde_json::json!([47, 8, 3])
    });
    assert_eq!(run_in(&cfg, tmp.path(), &["gen-data"]), EXIT_CONFIG);
}

#[test]
fn missing_inputs_map_to_io_and_protocol() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(
        run_in(&quick(), tmp.path(), &["prepass"]),
        EXIT_IO,
        "no data yet"
    );
    assert_eq!(run_in(&quick(), tmp.path(), &["gen-data"]), EXIT_OK);
    assert_eq!(
        run_in(&quick(), tmp.path(), &["federate", "--compression", "on"]),
        EXIT_PROTOCOL
    );
    assert_eq!(
        run_in(&quick(), tmp.path(), &["federate", "--compression", "off"]),
        EXIT_OK
    );
    fs::write(cli::data_path(tmp.path(), 0), b"FWDA garbage").unwrap();
    assert_eq!(
        run_in(&quick(), tmp.path(), &["federate", "--compression", "off"]),
        EXIT_IO
    );
}

#[test]
fn gen_data_is_deterministic_and_grayscales_the_listed_partition() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    assert_eq!(run_in(&quick(), a.path(), &["gen-data"]), EXIT_OK);
    assert_eq!(
        run_in(&quick(), b.path(), &["--threads", "2", "gen-data"]),
        EXIT_OK
    );
    for i in 0..2 {
        let x = fs::read(cli::data_path(a.path(), i)).unwrap();
        assert_eq!(x, fs::read(cli::data_path(b.path(), i)).unwrap());
    }
    let color = data::load_fwda(cli::data_path(a.path(), 0)).unwrap();
    let gray = data::load_fwda(cli::data_path(a.path(), 1)).unwrap();
    assert_eq!(color.len() + gray.len(), 240);
    assert!(gray
        .inputs
        .data()
        .chunks_exact(3)
        .all(|p| p[0] == p[1] && p[1] == p[2]));
    assert!(!color
        .inputs
        .data()
        .chunks_exact(3)
        .all(|p| p[0] == p[1] && p[1] == p[2]));

    let c = TempDir::new().unwrap();
    assert_eq!(
        run_in(&quick(), c.path(), &["--seed", "5", "gen-data"]),
        EXIT_OK
    );
    assert_ne!(
        fs::read(cli::data_path(a.path(), 0)).unwrap(),
        fs::read(cli::data_path(c.path(), 0)).unwrap()
    );
}

#[test]
fn full_pipeline_writes_expected_artifacts() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path();
    let cfg = ExperimentConfig::load(quick()).unwrap();
    assert_eq!(run_in(&quick(), out, &["gen-data"]), EXIT_OK);
    assert_eq!(run_in(&quick(), out, &["prepass"]), EXIT_OK);
    for i in 0..2 {
        let ds = WeightDataset::load(cli::weights_path(out, i)).unwrap();
        assert_eq!(ds.len(), cfg.prepass.epochs);
        assert_eq!(
            ds.param_count() as usize,
            cfg.build_model().unwrap().param_count() as usize
        );
        assert!(cli::decoder_path(out, i).exists());
        assert!(cli::autoencoder_path(out, i).exists());
    }
    let history = fs::read_to_string(out.join("prepass/ae_history.csv")).unwrap();
    assert_eq!(history.lines().count(), 1 + 2 * cfg.prepass.ae.epochs);

    assert_eq!(run_in(&quick(), out, &["federate"]), EXIT_OK);
    assert_eq!(
        run_in(&quick(), out, &["federate", "--compression", "off"]),
        EXIT_OK
    );
    for dir in ["federate-on", "federate-off"] {
        let csv = fs::read_to_string(out.join(dir).join("rounds.csv")).unwrap();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "round,collab_id,phase,loss,accuracy,uplink_bytes,downlink_bytes"
        );
        assert_eq!(lines.count(), cfg.federated.rounds * 2 * 2);
        let summary: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(out.join(dir).join("summary.json")).unwrap())
                .unwrap();
        assert_eq!(summary["rounds"], cfg.federated.rounds);
    }
    let on: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("federate-on/summary.json")).unwrap())
            .unwrap();
    let p = cfg.build_model().unwrap().param_count() as f64;
    assert_eq!(
        on["achieved_compression_ratio"].as_f64().unwrap(),
        p / cfg.prepass.ae.latent_dim as f64
    );

    // Identity replay is exact, so even zero thresholds hold.
    let strict = write_config(out, |v| {
        v["validation"] =
            serde_json::json!({"mean_accuracy_delta": 0.0, "max_accuracy_delta": 0.0});
    });
    assert_eq!(
        run_in(&strict, out, &["validate", "--identity-codec"]),
        EXIT_OK
    );
    let summary = fs::read_to_string(out.join("validation/summary.json")).unwrap();
    assert!(summary.contains("\"identity_codec\": true"));
    let rows = fs::read_to_string(out.join("validation/collab_0.csv")).unwrap();
    assert_eq!(rows.lines().count(), 1 + cfg.prepass.epochs);

    // The trained autoencoder is not exact, so zero thresholds fail.
    assert_eq!(run_in(&strict, out, &["validate"]), EXIT_THRESHOLD);
}

#[test]
fn savings_subcommand_outputs() {
    let v: serde_json::Value = serde_json::from_str(
        &cli::savings_report(&[
            "--original",
            "550570",
            "--compressed",
            "320",
            "--ae",
            "352915690",
            "--rounds",
            "40",
            "--collabs",
            "1000",
        ])
        .unwrap(),
    )
    .unwrap();
    assert!((v["savings_ratio"].as_f64().unwrap() - 116.4).abs() < 0.1);
    assert_eq!(v["decoder_cost"].as_f64().unwrap(), 176_457_845.0);

    let v: serde_json::Value = serde_json::from_str(
        &cli::savings_report(&[
            "--original",
            "550570",
            "--compressed",
            "320",
            "--ae",
            "352915690",
            "--rounds",
            "8",
            "--break-even",
            "collabs",
        ])
        .unwrap(),
    )
    .unwrap();
    assert!((v["break_even_collaborators"].as_f64().unwrap() - 40.1).abs() < 0.1);

    let csv = cli::savings_report(&[
        "--original",
        "100",
        "--compressed",
        "10",
        "--ae",
        "1000",
        "--sweep",
        "rounds",
        "--from",
        "1",
        "--to",
        "10",
        "--steps",
        "10",
    ])
    .unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "rounds,savings_ratio");
    let ratios: Vec<f64> = lines
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(ratios.len(), 10);
    assert!(ratios.windows(2).all(|w| w[1] >= w[0]));

    assert!(cli::savings_report(&[
        "--original",
        "10",
        "--compressed",
        "10",
        "--ae",
        "5",
        "--break-even",
        "rounds"
    ])
    .is_err());
    assert_eq!(
        run(&[
            "savings",
            "--original",
            "10",
            "--compressed",
            "20",
            "--ae",
            "5"
        ]),
        EXIT_CONFIG,
        "compressed larger than original"
    );
}
