//! Loader, writer, and end-to-end command tests over temp directories.

use std::fs;
use std::path::Path;
use std::process::Command;

use nalgebra::DMatrix;
use tempfile::TempDir;

use shfm::model::ParamState;
use shfm::sampler::ChainOutput;
use shfm::IndicatorPanel;
use shfm_cli::io::{
    load_adjacency_file, load_labeled_points, load_panel, read_chains, write_chains, write_panel,
};
use shfm_cli::{cmd_fit, cmd_predict, cmd_rank, cmd_simulate, RunConfig};

fn write(path: &Path, body: &str) {
    fs::write(path, body).unwrap();
}

#[test]
fn panel_round_trips_and_orders_cities_lexicographically() {
    let dir = TempDir::new().unwrap();
    let panel = IndicatorPanel::new(
        vec![
            DMatrix::from_row_slice(2, 3, &[0.1, -2.5, 3.0, 1e-12, 7.25, -0.0625]),
            DMatrix::from_row_slice(1, 3, &[5.5, 0.333333333333333, 2.0]),
        ],
        vec!["a".into(), "b".into(), "c".into()],
        vec!["alpha".into(), "beta".into()],
    )
    .unwrap();
    write_panel(dir.path(), &panel).unwrap();
    let loaded = load_panel(dir.path(), false).unwrap();
    assert_eq!(loaded.city_names, panel.city_names);
    assert_eq!(loaded.cities, panel.cities);

    // Filenames, not insertion order, decide the city order.
    write(&dir.path().join("aardvark.txt"), "1 2 3\n");
    let loaded = load_panel(dir.path(), false).unwrap();
    assert_eq!(loaded.city_names, vec!["aardvark", "alpha", "beta"]);
}

#[test]
fn panel_loader_detects_delimiters_per_file() {
    let dir = TempDir::new().unwrap();
    write(&dir.path().join("a.csv"), "1.0,2.0\n3.0,4.0\n");
    write(&dir.path().join("b.txt"), "5.0 6.0\n");
    let panel = load_panel(dir.path(), false).unwrap();
    assert_eq!(panel.cities[0][(1, 1)], 4.0);
    assert_eq!(panel.cities[1][(0, 0)], 5.0);
}

#[test]
fn panel_loader_reads_headers_and_rejects_mismatches() {
    let dir = TempDir::new().unwrap();
    write(&dir.path().join("a.csv"), "pm25,income\n1,2\n");
    write(&dir.path().join("b.csv"), "pm25,income\n3,4\n");
    let panel = load_panel(dir.path(), true).unwrap();
    assert_eq!(panel.indicator_names, vec!["pm25", "income"]);

    write(&dir.path().join("b.csv"), "pm25,wealth\n3,4\n");
    assert!(load_panel(dir.path(), true).is_err());
}

#[test]
fn parse_errors_name_the_file_and_line() {
    let dir = TempDir::new().unwrap();
    write(&dir.path().join("city.txt"), "1 2\n3 oops\n");
    let err = load_panel(dir.path(), false).unwrap_err().to_string();
    assert!(err.contains("city.txt"), "{err}");
    assert!(err.contains(":2"), "{err}");

    write(&dir.path().join("city.txt"), "1 2\n3\n");
    let err = load_panel(dir.path(), false).unwrap_err().to_string();
    assert!(err.contains("ragged"), "{err}");
}

#[test]
fn adjacency_matrix_and_edge_list_encodings_agree() {
    let dir = TempDir::new().unwrap();
    let matrix = dir.path().join("m.txt");
    let edges = dir.path().join("e.txt");
    write(
        &matrix,
        "0 1 0 0\n1 0 1 1\n0 1 0 0\n0 1 0 0\n",
    );
    write(&edges, "0 1\n2 1\n1 3\n");
    let from_matrix = load_adjacency_file(&matrix, 4).unwrap();
    let from_edges = load_adjacency_file(&edges, 4).unwrap();
    assert_eq!(from_matrix, vec![(0, 1), (1, 2), (1, 3)]);
    assert_eq!(from_matrix, from_edges);

    // An empty file is a valid empty edge list.
    let empty = dir.path().join("empty.txt");
    write(&empty, "");
    assert!(load_adjacency_file(&empty, 4).unwrap().is_empty());
}

#[test]
fn adjacency_loader_rejects_malformed_input() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("adj.txt");

    write(&path, "0 1 0\n0 0 1\n0 1 0\n"); // asymmetric matrix
    assert!(load_adjacency_file(&path, 3).unwrap_err().to_string().contains("asymmetric"));

    write(&path, "1 1 0\n1 0 1\n0 1 0\n"); // nonzero diagonal
    assert!(load_adjacency_file(&path, 3).unwrap_err().to_string().contains("diagonal"));

    write(&path, "0 1\n1 0\n0 2\n"); // duplicate edge in reverse orientation
    assert!(load_adjacency_file(&path, 3).unwrap_err().to_string().contains("duplicate"));

    write(&path, "0 3\n"); // out of range
    assert!(load_adjacency_file(&path, 3).unwrap_err().to_string().contains("out of range"));

    write(&path, "0 0\n"); // self edge
    assert!(load_adjacency_file(&path, 3).unwrap_err().to_string().contains("self edge"));

    write(&path, "0 1 2\n"); // neither encoding
    assert!(load_adjacency_file(&path, 3).is_err());
}

#[test]
fn labeled_points_reject_duplicates_and_bad_rows() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("pts.txt");
    write(&path, "a 1.0 2.0\nb 3.0 4.0\n");
    let pts = load_labeled_points(&path).unwrap();
    assert_eq!(pts[1], ("b".to_string(), [3.0, 4.0]));

    write(&path, "a 1.0 2.0\na 3.0 4.0\n");
    assert!(load_labeled_points(&path).unwrap_err().to_string().contains("duplicate"));

    write(&path, "a 1.0\n");
    assert!(load_labeled_points(&path).is_err());
}

#[test]
fn draw_store_round_trips_bit_for_bit() {
    let counts = [2usize, 3];
    let mut draws = Vec::new();
    for t in 0..5 {
        let mut s = ParamState::zeros(2, &counts);
        s.mu[0] = t as f64 + 0.125;
        s.beta[1] = -(t as f64);
        s.f[1][2] = 1.0 / (t as f64 + 1.0);
        s.theta[0] = awkward_value(t);
        s.lambda1 = 0.7 + t as f64;
        draws.push(s);
    }
    let chains = vec![ChainOutput {
        draws,
        logpost_trace: vec![-1.5, -1.25, -1.0],
        acceptance_rate_lambda1: Some(0.37),
        chain_id: 0,
    }];
    let dir = TempDir::new().unwrap();
    write_chains(dir.path(), &chains).unwrap();
    let (loaded, schema) = read_chains(dir.path()).unwrap();
    assert_eq!(schema.tract_counts, counts);
    assert_eq!(loaded.len(), 1);
    assert_eq!(loaded[0].logpost_trace, chains[0].logpost_trace);
    assert_eq!(loaded[0].acceptance_rate_lambda1, Some(0.37));
    for (a, b) in loaded[0].draws.iter().zip(&chains[0].draws) {
        assert_eq!(a.mu, b.mu);
        assert_eq!(a.f, b.f);
        assert_eq!(a.theta, b.theta);
        assert_eq!(a.lambda1, b.lambda1);
    }
}

/// Non-round values that would expose lossy serialization.
fn awkward_value(t: usize) -> f64 {
    [0.1, -1e-300, std::f64::consts::PI, 2.5e17, -0.0][t % 5]
}

fn config_from(dir: &Path, body: &str) -> RunConfig {
    let path = dir.join("config.toml");
    fs::write(&path, body).unwrap();
    RunConfig::load(&path).unwrap()
}

#[test]
fn simulate_fit_rank_predict_pipeline_runs_end_to_end() {
    let dir = TempDir::new().unwrap();
    let data_dir = dir.path().join("data");
    let fit_dir = dir.path().join("fit");

    let sim = config_from(
        dir.path(),
        &format!(
            "out_dir = \"{}\"\nseed = 11\nn_cities = 4\nn_indicators = 2\n\
             tracts_min = 3\ntracts_max = 6\npreset = \"spatial-strong\"\n",
            data_dir.display()
        ),
    );
    cmd_simulate(&sim).unwrap();
    assert!(data_dir.join("truth.json").exists());

    let fit = config_from(
        dir.path(),
        &format!(
            "out_dir = \"{}\"\nmodel = \"uhfm\"\nseed = 7\n\
             panel_dir = \"{}\"\ncity_centroids_file = \"{}\"\n\
             n_iter = 600\nburn_in = 200\nthin = 2\nn_chains = 2\n",
            fit_dir.display(),
            data_dir.join("panel").display(),
            data_dir.join("city_centroids.txt").display()
        ),
    );
    let outcome = cmd_fit(&fit).unwrap();
    assert!(!outcome.messages.is_empty());
    assert!(fit_dir.join("metadata.json").exists());
    assert!(fit_dir.join("index_summary.json").exists());
    assert!(fit_dir.join("ranks.csv").exists());
    let (chains, schema) = read_chains(&fit_dir.join("draws")).unwrap();
    assert_eq!(chains.len(), 2);
    assert_eq!(schema.n_draws_per_chain, 200);

    let rank = config_from(
        dir.path(),
        &format!("out_dir = \"{}\"\nseed = 7\n", fit_dir.display()),
    );
    cmd_rank(&rank).unwrap();
    assert!(fit_dir.join("rank_histograms.csv").exists());

    let new_file = dir.path().join("new_sites.txt");
    fs::write(&new_file, "u1 100.0 100.0\nu2 -50.0 12.0\n").unwrap();
    let predict = config_from(
        dir.path(),
        &format!(
            "out_dir = \"{}\"\nseed = 7\nnew_centroids_file = \"{}\"\n",
            fit_dir.display(),
            new_file.display()
        ),
    );
    cmd_predict(&predict).unwrap();
    let predictions = fs::read_to_string(fit_dir.join("predictions.csv")).unwrap();
    assert_eq!(predictions.lines().count(), 3);
}

#[test]
fn shfm_fit_requires_tract_geometry() {
    let dir = TempDir::new().unwrap();
    let data_dir = dir.path().join("data");
    let sim = config_from(
        dir.path(),
        &format!(
            "out_dir = \"{}\"\nseed = 3\nn_cities = 3\nn_indicators = 2\ntracts_min = 3\ntracts_max = 4\n",
            data_dir.display()
        ),
    );
    cmd_simulate(&sim).unwrap();

    let fit = config_from(
        dir.path(),
        &format!(
            "out_dir = \"{}\"\nmodel = \"shfm\"\npanel_dir = \"{}\"\ncity_centroids_file = \"{}\"\n\
             n_iter = 50\nburn_in = 10\nthin = 1\n",
            dir.path().join("fit").display(),
            data_dir.join("panel").display(),
            data_dir.join("city_centroids.txt").display()
        ),
    );
    let err = cmd_fit(&fit).unwrap_err().to_string();
    assert!(err.contains("tract_centroids_dir"), "{err}");
}

#[test]
fn binary_reports_input_errors_as_json_with_exit_code_2() {
    let out = Command::new(env!("CARGO_BIN_EXE_shfm"))
        .args(["fit", "--config", "/nonexistent/config.toml"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8(out.stderr).unwrap();
    let parsed: serde_json::Value = serde_json::from_str(stderr.trim()).unwrap();
    assert_eq!(parsed["error"]["kind"], "input");

    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "out_dir = \"x\"\nbogus_key = 1\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_shfm"))
        .args(["fit", "--config"])
        .arg(&bad)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn binary_simulate_honors_seed_override() {
    let dir = TempDir::new().unwrap();
    let config = dir.path().join("config.toml");
    fs::write(
        &config,
        "out_dir = \"unused\"\nn_cities = 3\nn_indicators = 2\ntracts_min = 3\ntracts_max = 4\n",
    )
    .unwrap();
    let run = |out: &Path, seed: &str| {
        let status = Command::new(env!("CARGO_BIN_EXE_shfm"))
            .args(["simulate", "--seed", seed, "--config"])
            .arg(&config)
            .arg("--out")
            .arg(out)
            .status()
            .unwrap();
        assert!(status.success());
        fs::read_to_string(out.join("truth.json")).unwrap()
    };
    let a = run(&dir.path().join("a"), "42");
    let b = run(&dir.path().join("b"), "42");
    let c = run(&dir.path().join("c"), "43");
    assert_eq!(a, b);
    assert_ne!(a, c);
}
