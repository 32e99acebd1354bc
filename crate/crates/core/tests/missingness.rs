use statrs::distribution::{ChiSquared, ContinuousCDF};
use tabimpute::evalkit::{synth_generate, SyntheticSpec};
use tabimpute::missingness::{generate, mar, mcar, mnar, MaskSpec, Mechanism};
use tabimpute::ndcore::{Mask, Matrix};

fn data(rows: usize, dim: usize, rho: f64, seed: u64) -> Matrix {
    synth_generate(&SyntheticSpec::gaussian(dim, rho, rows, seed)).unwrap().0.numeric_view()
}

/// Pearson chi-square p-value for independence of the mask of column `c`
/// and the quartile of the column's true value.
fn quartile_independence_p(x: &Matrix, mask: &Mask, c: usize) -> f64 {
    let mut vals: Vec<f64> = (0..x.rows()).map(|r| x.get(r, c)).collect();
    vals.sort_by(f64::total_cmp);
    let cut = |q: usize| vals[q * vals.len() / 4];
    let cuts = [cut(1), cut(2), cut(3)];
    let mut table = [[0.0f64; 2]; 4];
    for r in 0..x.rows() {
        let v = x.get(r, c);
        let bin = cuts.iter().filter(|&&k| v >= k).count();
        table[bin][usize::from(mask.is_missing(r, c))] += 1.0;
    }
    let n = x.rows() as f64;
    let col_tot = [0, 1].map(|j| table.iter().map(|row| row[j]).sum::<f64>());
    let mut stat = 0.0;
    for row in &table {
        let row_tot = row[0] + row[1];
        for j in 0..2 {
            let expected = row_tot * col_tot[j] / n;
            stat += (row[j] - expected).powi(2) / expected;
        }
    }
    1.0 - ChiSquared::new(3.0).unwrap().cdf(stat)
}

#[test]
fn mnar_missingness_depends_on_the_data() {
    let x = data(10_000, 4, 0.6, 3);
    let m = mnar(&x, 0.3, 5).unwrap();
    let p = quartile_independence_p(&x, &m, 0);
    assert!(p < 0.01, "p = {p}");
}

#[test]
fn mcar_missingness_does_not_depend_on_the_data() {
    let x = data(10_000, 4, 0.6, 3);
    let m = mcar(x.rows(), x.cols(), 0.3, 5).unwrap();
    // Generated without reading values; identical for any data of this shape.
    assert_eq!(m, mcar(x.rows(), x.cols(), 0.3, 5).unwrap());
    assert!(quartile_independence_p(&x, &m, 0) > 1e-4);
}

#[test]
fn all_mechanisms_calibrate_at_ten_thousand_rows() {
    let x = data(10_000, 8, 0.5, 8);
    for seed in 0..3 {
        let m = mcar(10_000, 8, 0.3, seed).unwrap();
        assert!((m.missing_ratio() - 0.3).abs() <= 0.01);
        let m = mnar(&x, 0.3, seed).unwrap();
        assert!((m.missing_ratio() - 0.3).abs() <= 0.01);
        let obs = [1, 4, 6];
        let m = mar(&x, 0.3, &obs, seed).unwrap();
        let maskable = (0..10_000)
            .flat_map(|r| (0..8).filter(|c| !obs.contains(c)).map(move |c| (r, c)))
            .filter(|&(r, c)| m.is_missing(r, c))
            .count();
        assert!((maskable as f64 / 50_000.0 - 0.3).abs() <= 0.01);
        assert!((0..10_000).all(|r| obs.iter().all(|&c| !m.is_missing(r, c))));
    }
}

#[test]
fn generate_is_deterministic_per_seed() {
    let x = data(500, 3, 0.4, 1);
    for mech in [Mechanism::Mcar, Mechanism::Mar, Mechanism::Mnar] {
        let mut spec = MaskSpec::new(mech, 0.3, 12);
        if mech == Mechanism::Mar {
            spec.observed_cols = vec![2];
        }
        assert_eq!(generate(&spec, &x).unwrap(), generate(&spec, &x).unwrap());
    }
    let bad = MaskSpec::new(Mechanism::Mar, 0.3, 1);
    assert!(generate(&bad, &x).is_err());
}
