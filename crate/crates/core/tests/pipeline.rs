use std::io::Write;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sobolis::densities::{uniform_density, Bounds, DensityRef};
use sobolis::estimators::{rank_eta, sobol_from_eta};
use sobolis::givendata::{
    eta_sweep, linspace, load_dataset, read_sweep, standardize, theta_eta, write_sweep, SweepMode,
    SweepSpec, ThetaConfig,
};
use sobolis::models::{synthetic_dataset, GFunctionSpec, Model};
use sobolis::SubsetIndex;

fn unit(k: usize) -> DensityRef {
    Arc::new(uniform_density(Bounds::unit(k)))
}

/// Writes a g-function sample mapped affinely to `[lo, hi]^3`.
fn write_scaled_csv(path: &std::path::Path, n: usize, lo: f64, hi: f64) {
    let model = Model::gfunction(&GFunctionSpec::benchmark());
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let data = synthetic_dataset(&model, unit(3).as_ref(), n, &mut rng).unwrap();
    let mut f = std::fs::File::create(path).unwrap();
    writeln!(f, "a,b,c,out").unwrap();
    for (x, y) in data.x().rows().zip(data.y()) {
        let s: Vec<String> = x.iter().map(|v| (lo + (hi - lo) * v).to_string()).collect();
        writeln!(f, "{},{y}", s.join(",")).unwrap();
    }
}

#[test]
fn csv_to_sweep_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("data.csv");
    write_scaled_csv(&csv, 20_000, -2.0, 3.0);

    let bounds = Bounds::new(vec![-2.0; 3], vec![3.0; 3]).unwrap();
    let raw = load_dataset(&csv, Some(bounds.clone())).unwrap();
    assert_eq!(raw.column_names().unwrap()[3], "out");
    let data = standardize(&raw, &bounds).unwrap();
    let u = SubsetIndex::new(3, &[1]).unwrap();

    let spec = SweepSpec {
        mode: SweepMode::Marginal { target: 1 },
        alpha_grid: linspace(0.5, 1.5, 3).unwrap(),
        beta_grid: linspace(0.5, 1.5, 3).unwrap(),
        u: u.clone(),
    };
    let res = eta_sweep(&data, &spec).unwrap();
    assert_eq!(res.entries.len(), 9);
    let out = dir.path().join("sweep.csv");
    write_sweep(&res, &out).unwrap();
    assert_eq!(read_sweep(&out).unwrap(), res.entries);

    // The baseline entry, theta_eta at the baseline and the plain rank
    // estimator all agree exactly.
    let base = res.entries.iter().find(|e| e.baseline).unwrap();
    let (r, w) = theta_eta(&data, &u, &ThetaConfig::baseline(3)).unwrap();
    let plain = rank_eta(data.y(), &data.x().column(0)).unwrap();
    assert_eq!(base.eta_hat.to_bits(), plain.value.to_bits());
    assert_eq!(r.value.to_bits(), plain.value.to_bits());
    assert!(w.iter().all(|&v| v == 1.0));

    let s = sobol_from_eta(r.value, data.y()).unwrap();
    let exact = (13.0 / 12.0 - 1.0) / GFunctionSpec::benchmark().variance();
    assert!((s - exact).abs() < 0.05, "S_1 = {s}, exact {exact}");
}

#[test]
fn data_outside_given_bounds_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("data.csv");
    write_scaled_csv(&csv, 100, 0.0, 2.0);
    let raw = load_dataset(&csv, None).unwrap();
    let narrow = Bounds::unit(3);
    assert!(standardize(&raw, &narrow).is_err());
}

#[test]
fn inferred_bounds_cover_the_data() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("data.csv");
    write_scaled_csv(&csv, 500, 10.0, 11.0);
    let raw = load_dataset(&csv, None).unwrap();
    let data = standardize(&raw, raw.bounds()).unwrap();
    for x in data.x().rows() {
        assert!(x.iter().all(|v| *v > 0.0 && *v < 1.0));
    }
}
