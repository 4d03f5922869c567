use std::collections::HashMap;
use std::path::Path;
use std::process::{Command, Output};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use netmee::graph::{ring, Graph};
use netmee::harness::design_truth;
use netmee::Dataset;

fn netmee(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_netmee"))
        .args(args)
        .env_remove("NETMEE_THREADS")
        .output()
        .expect("run netmee")
}

fn read_table(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    let header = rdr.headers().unwrap().iter().map(String::from).collect();
    let rows = rdr
        .records()
        .map(|r| r.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

fn estimates(dir: &Path) -> HashMap<String, f64> {
    let (_, rows) = read_table(&dir.join("estimates.csv"));
    rows.into_iter()
        .map(|r| (r[0].clone(), r[1].parse().unwrap()))
        .collect()
}

fn logistic(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

/// Equilibrium propensities by plain successive substitution.
fn oracle_equilibrium(g: &Graph, z: &DMatrix<f64>, theta: &[f64]) -> Vec<f64> {
    let n = g.node_count();
    let k = z.ncols();
    let lambda = theta[k];
    let index: Vec<f64> = (0..n)
        .map(|i| (0..k).map(|c| z[(i, c)] * theta[c]).sum())
        .collect();
    let mut p = vec![0.5; n];
    for _ in 0..100_000 {
        let next: Vec<f64> = (0..n)
            .map(|i| {
                let nb = g.neighbors(i);
                let share = if nb.is_empty() {
                    0.0
                } else {
                    nb.iter().map(|&j| p[j]).sum::<f64>() / nb.len() as f64
                };
                logistic(index[i] + lambda * share)
            })
            .collect();
        let diff = next
            .iter()
            .zip(&p)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        p = next;
        if diff < 1e-15 {
            break;
        }
    }
    p
}

fn loglik(g: &Graph, z: &DMatrix<f64>, d: &[u8], theta: &[f64]) -> f64 {
    let p = oracle_equilibrium(g, z, theta);
    p.iter()
        .zip(d)
        .map(|(&p, &d)| if d == 1 { p.ln() } else { (1.0 - p).ln() })
        .sum()
}

fn numerical_gradient(f: &dyn Fn(&[f64]) -> f64, theta: &[f64], h: f64) -> DVector<f64> {
    DVector::from_iterator(
        theta.len(),
        (0..theta.len()).map(|k| {
            let mut up = theta.to_vec();
            let mut dn = theta.to_vec();
            up[k] += h;
            dn[k] -= h;
            (f(&up) - f(&dn)) / (2.0 * h)
        }),
    )
}

/// Maximum likelihood of the equilibrium logit by Newton on numerical
/// derivatives of the log-likelihood.
fn oracle_mle(g: &Graph, z: &DMatrix<f64>, d: &[u8]) -> Vec<f64> {
    let f = |t: &[f64]| loglik(g, z, d, t);
    let k = z.ncols() + 1;
    let mut theta = vec![0.0; k];
    for _ in 0..50 {
        let grad = numerical_gradient(&f, &theta, 1e-5);
        let mut hess = DMatrix::zeros(k, k);
        for c in 0..k {
            let h = 1e-4;
            let mut up = theta.clone();
            let mut dn = theta.clone();
            up[c] += h;
            dn[c] -= h;
            let col =
                (numerical_gradient(&f, &up, 1e-5) - numerical_gradient(&f, &dn, 1e-5)) / (2.0 * h);
            hess.set_column(c, &col);
        }
        let hess = (&hess + hess.transpose()) * 0.5;
        let step = hess.lu().solve(&(-&grad)).unwrap();
        let mut alpha = 1.0;
        let base = f(&theta);
        loop {
            let cand: Vec<f64> = theta
                .iter()
                .zip(step.iter())
                .map(|(t, s)| t + alpha * s)
                .collect();
            if cand[k - 1].abs() < 4.0 && f(&cand) >= base - 1e-9 || alpha < 1e-6 {
                theta = cand;
                break;
            }
            alpha *= 0.5;
        }
        if step.amax() < 1e-11 {
            break;
        }
    }
    theta
}

/// Zero-noise fixture: no outcome noise and `V` replaced by its conditional
/// mean given treatment, evaluated at the first-stage maximum likelihood fit.
fn zero_noise_fixture(dir: &Path) -> Vec<f64> {
    let n = 600;
    let g = ring(n).unwrap();
    let truth = design_truth();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let x = DMatrix::from_fn(n, 1, |_, _| rng.sample::<f64, _>(StandardNormal));
    let z = DMatrix::from_fn(n, 1, |_, _| rng.sample::<f64, _>(StandardNormal));
    let zd = z.clone().insert_column(0, 1.0);
    let theta0 = [truth.first.beta_d.clone(), vec![truth.first.lambda]].concat();
    let p0 = oracle_equilibrium(&g, &zd, &theta0);
    let d: Vec<u8> = (0..n)
        .map(|i| (p0[i] >= rng.random::<f64>()) as u8)
        .collect();

    let mle = oracle_mle(&g, &zd, &d);
    let p_hat = oracle_equilibrium(&g, &zd, &mle);
    let mut data = Dataset::new(&g, vec![0.0; n], d, &x, &z).unwrap();
    for i in 0..n {
        let t = data.labels[i];
        let c = truth.cell(t).unwrap();
        let m = if t.own {
            p_hat[i] / 2.0
        } else {
            (1.0 + p_hat[i]) / 2.0
        };
        data.y[i] = c.beta_x[0] + c.beta_x[1] * x[(i, 0)] + c.beta_p * m;
    }
    netmee::io::write_dataset(&dir.join("nodes.csv"), &dir.join("edges.csv"), &g, &data).unwrap();
    mle
}

#[test]
fn estimate_recovers_zero_noise_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let mle = zero_noise_fixture(dir.path());
    let out = dir.path().join("run");
    let o = netmee(&[
        "estimate",
        "--nodes",
        dir.path().join("nodes.csv").to_str().unwrap(),
        "--edges",
        dir.path().join("edges.csv").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let est = estimates(&out);
    assert_eq!(est.len(), 15);
    for (k, name) in ["beta_D0", "beta_D1", "lambda"].iter().enumerate() {
        assert!(
            (est[*name] - mle[k]).abs() < 1e-4,
            "{name}: {} vs oracle {}",
            est[*name],
            mle[k]
        );
    }
    let truth = design_truth();
    for t in netmee::ExposureLabel::ALL {
        let c = truth.cell(t).unwrap();
        for (k, b) in c.beta_x.iter().enumerate() {
            let name = format!("beta_X{k}{t}");
            assert!((est[&name] - b).abs() < 1e-4, "{name}: {}", est[&name]);
        }
        let name = format!("beta_p{t}");
        assert!(
            (est[&name] - c.beta_p).abs() < 1e-4,
            "{name}: {}",
            est[&name]
        );
    }
    assert!(out.join("covariance.csv").exists());
    let diag = std::fs::read_to_string(out.join("diagnostics.txt")).unwrap();
    assert!(diag.contains("converged = true"), "{diag}");

    // The estimation artifacts feed the effects command.
    let o = netmee(&["effects", "--from", out.to_str().unwrap(), "--x", "1,1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = read_table(&out.join("mer.csv"));
    assert_eq!(
        header,
        [
            "t_own",
            "t_neigh",
            "p",
            "estimate",
            "std_error",
            "ci_lower",
            "ci_upper"
        ]
    );
    assert_eq!(rows.len(), 12);
    let row = rows
        .iter()
        .find(|r| r[0] == "1" && r[1] == "1" && r[2] == "0.5")
        .unwrap();
    assert!((row[3].parse::<f64>().unwrap() - 3.75).abs() < 1e-4);
}

#[test]
fn simulate_writes_parameter_and_mer_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sim");
    let o = netmee(&[
        "simulate",
        "--n",
        "1000",
        "--reps",
        "2",
        "--seed",
        "3",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = read_table(&out.join("mc_summary.csv"));
    assert_eq!(header[0], "name");
    assert_eq!(rows.len(), 27);
    assert_eq!(rows.iter().filter(|r| r[0].starts_with("MER")).count(), 12);
    let echoed = std::fs::read_to_string(out.join("config.toml")).unwrap();
    assert!(
        echoed.contains("seed = 3") && echoed.contains("reps = 2"),
        "{echoed}"
    );
}

#[test]
fn config_file_and_flags_combine() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        "seed = 5\n[simulate]\nn = 200\nreps = 2\ntopology = \"rgg\"\n",
    )
    .unwrap();
    let out = dir.path().join("sim");
    let o = netmee(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--hac-c",
        "1.5",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let echoed = std::fs::read_to_string(out.join("config.toml")).unwrap();
    assert!(
        echoed.contains("c = 1.5") && echoed.contains("topology = \"rgg\""),
        "{echoed}"
    );
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn malformed_csv_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let nodes = write(
        dir.path(),
        "nodes.csv",
        "id,y,d,x1,z1\na,1,0,0,0\nb,1,7,0,0\n",
    );
    let edges = write(dir.path(), "edges.csv", "src,dst\na,b\n");
    let o = netmee(&["estimate", "--nodes", &nodes, "--edges", &edges]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("row 3"), "{err}");

    let nodes = write(
        dir.path(),
        "nodes2.csv",
        "id,y,d,x1,z1\na,1,0,0,0\nb,1,1,0,0\n",
    );
    let edges = write(dir.path(), "edges2.csv", "src,dst\na,zz\n");
    let o = netmee(&["estimate", "--nodes", &nodes, "--edges", &edges]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown node id"));
}

#[test]
fn missing_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.csv");
    let o = netmee(&[
        "estimate",
        "--nodes",
        missing.to_str().unwrap(),
        "--edges",
        missing.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn convergence_failure_has_its_own_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    zero_noise_fixture(dir.path());
    let cfg = write(
        dir.path(),
        "tight.toml",
        "[gmm]\nmax_newton = 0\nmax_restarts = 0\n",
    );
    let nodes = dir.path().join("nodes.csv");
    let edges = dir.path().join("edges.csv");
    let o = netmee(&[
        "estimate",
        "--nodes",
        nodes.to_str().unwrap(),
        "--edges",
        edges.to_str().unwrap(),
        "--config",
        &cfg,
        "--out",
        dir.path().join("x").to_str().unwrap(),
    ]);
    assert_eq!(
        o.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
}

#[test]
fn bad_configuration_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", "sed = 4\n");
    let o = netmee(&["simulate", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    let o = netmee(&[
        "simulate",
        "--hac-c=-1",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let o = Command::new(env!("CARGO_BIN_EXE_netmee"))
        .args(["simulate", "--reps", "1", "--n", "100"])
        .env("NETMEE_THREADS", "zero")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}
