use std::fs;
use std::path::Path;

use fedtraffic::dataio::{load_csv, write_csv, FEATURES};
use fedtraffic::metrics::ks_statistic;
use fedtraffic::neuralnet::read_checkpoint;
use fedtraffic_cli::runner::load_summary;
use fedtraffic_cli::synthetic::ClientParams;
use fedtraffic_cli::{emit_plot_data, generate_synthetic, run_experiment, Days, ExperimentConfig, Setting, SyntheticSpec};

fn small_config(dir: &Path, setting: &str, extra: &str) -> ExperimentConfig {
    let text = format!(
        r#"
name = "small"
setting = "{setting}"
seeds = [0, 1]
output_dir = "{}"

[data.synthetic]
n_clients = 3
days = 1
seed = 4

[preprocess]
window = 6

[model]
architecture = "mlp"
width = 8

[federation]
rounds = 3
local_epochs = 1

[training]
kind = "early_stopping"
max_epochs = 4
patience = 2
{extra}"#,
        dir.display()
    );
    ExperimentConfig::parse(&text).unwrap()
}

fn csv_rows(path: &Path) -> usize {
    csv::Reader::from_path(path).unwrap().records().count()
}

#[test]
fn config_round_trips_through_toml() {
    let dir = tempfile::tempdir().unwrap();
    let extra = r#"
[aggregator]
strategy = "FedAdam"
lambda = 0.01

[grid]
eta = [0.01, 0.1, 1.0]
lambda = [0.0001, 0.001]
"#;
    let cfg = small_config(dir.path(), "federated", extra);
    let again = ExperimentConfig::parse(&cfg.to_toml().unwrap()).unwrap();
    assert_eq!(again, cfg);
    let resolved = cfg.resolved();
    assert_eq!(ExperimentConfig::parse(&resolved.to_toml().unwrap()).unwrap(), resolved);
    assert_eq!(cfg.aggregators().len(), 6);
}

#[test]
fn unknown_keys_and_bad_values_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let good = small_config(dir.path(), "federated", "").to_toml().unwrap();
    assert!(ExperimentConfig::parse(&good.replace("[model]", "[model]\ndepth = 3")).is_err());
    let err = ExperimentConfig::parse(&good.replace("window = 6", "window = 0")).unwrap_err();
    assert!(err.to_string().starts_with("preprocess.window"), "{err}");
    assert!(ExperimentConfig::parse(&good.replace("\"mlp\"", "\"transformer\"")).is_err());
}

#[test]
fn generator_lengths_skew_and_determinism() {
    let spec = SyntheticSpec::new(4, Days::Range([1, 3]), 12);
    let a = generate_synthetic(&spec).unwrap();
    assert_eq!(a.len(), 4);
    for (ds, p) in a.iter().zip(spec.client_params()) {
        assert_eq!(ds.n_timesteps(), p.days * 720);
    }
    let b = generate_synthetic(&spec).unwrap();
    assert_eq!(a, b);

    let base = ClientParams { days: 3, ..spec.client_params()[0].clone() };
    let mut two = SyntheticSpec::new(2, Days::Fixed(3), 1);
    two.clients = vec![ClientParams { level: 1.0, ..base.clone() }, ClientParams { level: 2.5, ..base }];
    let d = generate_synthetic(&two).unwrap();
    assert_eq!(d[0].n_timesteps(), 2160);
    let uplink = FEATURES.iter().position(|f| *f == "UpLink").unwrap();
    assert!(ks_statistic(&d[0].column(uplink), &d[1].column(uplink)).unwrap() > 0.2);
}

#[test]
fn generated_traces_survive_the_csv_format() {
    let dir = tempfile::tempdir().unwrap();
    let ds = &generate_synthetic(&SyntheticSpec::new(1, Days::Fixed(1), 3)).unwrap()[0];
    let path = dir.path().join(format!("{}.csv", ds.client_id));
    write_csv(ds, fs::File::create(&path).unwrap()).unwrap();
    let back = load_csv(&path, &FEATURES).unwrap();
    assert_eq!(&back, ds);
}

#[test]
fn federated_run_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "federated", "");
    let summary = run_experiment(&cfg).unwrap();
    let root = dir.path().join("small");
    for f in ["manifest.toml", "summary.json", "summary.csv", "plot_data.csv"] {
        assert!(root.join(f).is_file(), "{f}");
    }
    assert_eq!(summary.cells.len(), 1);
    let cell = &summary.cells[0];
    assert_eq!(cell.runs.len(), 2);
    for seed in [0, 1] {
        let run = root.join(&cell.cell).join(format!("seed-{seed}"));
        assert_eq!(csv_rows(&run.join("rounds.csv")), 3);
        assert_eq!(csv_rows(&run.join("client_rounds.csv")), 9);
        read_checkpoint(&fs::read(run.join("checkpoint.bin")).unwrap()).unwrap();
    }
    assert_eq!(csv_rows(&root.join("summary.csv")), 2);
    assert!(cell.mean.test_nrmse.is_finite());
    assert!(cell.std.test_nrmse >= 0.0);
    assert_eq!(load_summary(&root.join("summary.json")).unwrap(), summary);
    // Three metrics per round and seed.
    assert_eq!(csv_rows(&root.join("plot_data.csv")), 2 * 3 * 3);
}

#[test]
fn grid_rows_are_cells_times_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let extra = "[aggregator]\nstrategy = \"FedProx\"\n[grid]\nmu = [0.001, 0.01, 0.1, 1.0]\n";
    let mut cfg = small_config(dir.path(), "federated", extra);
    cfg.federation.rounds = 1;
    let summary = run_experiment(&cfg).unwrap();
    assert_eq!(summary.cells.len(), 4);
    assert_eq!(csv_rows(&dir.path().join("small/summary.csv")), 4 * 2);
    let mus: Vec<f64> = summary.cells.iter().map(|c| c.aggregator.mu).collect();
    assert_eq!(mus, [0.001, 0.01, 0.1, 1.0]);
}

#[test]
fn manifest_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "federated", "");
    run_experiment(&cfg).unwrap();
    let manifest = dir.path().join("small/manifest.toml");
    let mut again = ExperimentConfig::load(&manifest).unwrap();
    let other = tempfile::tempdir().unwrap();
    again.output_dir = other.path().to_path_buf();
    run_experiment(&again).unwrap();
    for f in ["FedAvg/seed-0/rounds.csv", "FedAvg/seed-1/checkpoint.bin", "summary.csv", "plot_data.csv"] {
        assert_eq!(fs::read(dir.path().join("small").join(f)).unwrap(), fs::read(other.path().join("small").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn individual_and_centralized_settings() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path(), "individual", "");
    if let Some(s) = &mut cfg.data.synthetic {
        s.n_clients = 1;
    }
    cfg.seeds = vec![3];
    let s = run_experiment(&cfg).unwrap();
    assert_eq!(s.setting, Setting::Individual);
    assert_eq!((s.n_clients, s.cells.len(), s.cells[0].runs.len()), (1, 1, 1));
    let run = &s.cells[0].runs[0];
    assert!(run.curve.len() <= 4 && !run.curve.is_empty());
    assert!(run.client_mb.is_none());
    assert!(dir.path().join("small/FedAvg/seed-3/checkpoint-bs000.bin").is_file());

    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "centralized", "");
    let s = run_experiment(&cfg).unwrap();
    assert!(s.cells[0].runs.iter().all(|r| r.metrics.val_mae.is_finite()));
    let mut plot = Vec::new();
    emit_plot_data(&[s], &mut plot).unwrap();
    assert!(String::from_utf8(plot).unwrap().starts_with("experiment,seed,round,metric,value\n"));
}

#[test]
fn data_can_come_from_csv_files() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    fs::create_dir_all(&data).unwrap();
    for ds in generate_synthetic(&SyntheticSpec::new(2, Days::Fixed(1), 8)).unwrap() {
        write_csv(&ds, fs::File::create(data.join(format!("{}.csv", ds.client_id))).unwrap()).unwrap();
    }
    let text = format!(
        "name = \"files\"\nsetting = \"federated\"\noutput_dir = \"{}\"\n[data]\npaths = [\"data/bs000.csv\", \"data/bs001.csv\"]\n[model]\narchitecture = \"gru\"\nwidth = 4\n[federation]\nrounds = 2\nlocal_epochs = 1\n",
        dir.path().join("out").display()
    );
    let cfg_path = dir.path().join("exp.toml");
    fs::write(&cfg_path, text).unwrap();
    let cfg = ExperimentConfig::load(&cfg_path).unwrap();
    let s = run_experiment(&cfg).unwrap();
    assert_eq!(s.n_clients, 2);
    assert_eq!(s.cells[0].runs[0].curve.len(), 2);
}
