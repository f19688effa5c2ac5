use csl_core::cosmogenesis::{asymptotic_slope, mean_n_csl, mean_n_numerical, CosmoParams};

fn params(lambda: f64, t: f64, n_max: usize) -> CosmoParams {
    CosmoParams { m: 1.0, g: 0.1, cells: 1, lambda, total_time: t, n_max }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

#[test]
fn master_equation_reproduces_closed_form() {
    for lambda in [0.1, 0.5, 2.0] {
        let p = params(lambda, 20.0, 16);
        let traj = mean_n_numerical(&p, 20).unwrap();
        assert!(traj.truncation_adequate);
        for (t, n) in traj.times.iter().zip(&traj.n_mean).skip(1) {
            let exact = mean_n_csl(&p.with_time(*t));
            assert!(rel(*n, exact) < 1e-3, "lambda={lambda} t={t}: {n} vs {exact}");
        }
    }
}

#[test]
fn cells_scale_the_total() {
    let one = mean_n_numerical(&params(0.5, 5.0, 10), 1).unwrap().final_n();
    let three = mean_n_numerical(&CosmoParams { cells: 3, ..params(0.5, 5.0, 10) }, 1).unwrap().final_n();
    assert!(rel(three, 3.0 * one) < 1e-14);
}

#[test]
fn truncation_converged() {
    let small = mean_n_numerical(&params(0.5, 10.0, 8), 1).unwrap().final_n();
    let large = mean_n_numerical(&params(0.5, 10.0, 12), 1).unwrap().final_n();
    assert!(rel(small, large) < 1e-6);
}

#[test]
fn linear_growth_at_late_times() {
    let p = params(0.5, 20.0, 12);
    let traj = mean_n_numerical(&p, 40).unwrap();
    let k = traj.times.len();
    // Average over a full oscillation period to remove the transient ripple.
    let (t1, n1) = (traj.times[k - 1], traj.n_mean[k - 1]);
    let i0 = traj.times.iter().position(|&t| t >= t1 - 2.0 * std::f64::consts::PI).unwrap();
    let slope = (n1 - traj.n_mean[i0]) / (t1 - traj.times[i0]);
    assert!(rel(slope, asymptotic_slope(&p)) < 0.05, "{slope} vs {}", asymptotic_slope(&p));
}

#[test]
fn zeno_suppression() {
    let t = 2.0;
    let watched = mean_n_numerical(&params(1000.0, t, 6), 1).unwrap().final_n();
    let free = mean_n_numerical(&params(1.0, t, 6), 1).unwrap().final_n();
    assert!(watched < 0.01 * free, "{watched} vs {free}");
    assert!(rel(watched, mean_n_csl(&params(1000.0, t, 6))) < 1e-3);
}
