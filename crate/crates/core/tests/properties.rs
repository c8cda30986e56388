use gsm_core::cmp::{CmpObjective, CmpParams};
use gsm_core::inference::estimate_sandwich;
use gsm_core::numkit::{sym_eigen, Matrix};
use gsm_core::ordinal::{t_of_log_ratio, t_pair, transform_t};
use gsm_core::samplers::{sample_cmp, sample_trunc_gauss, sample_vmf, simulate_cmp, RngStream};
use gsm_core::study::{cmp_design, summarize};
use gsm_core::ParamVec;
use proptest::prelude::*;

proptest! {
    #[test]
    fn t_lies_in_unit_interval(u in 0.0f64..1e12, lr in -800.0f64..800.0) {
        let a = transform_t(u).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
        let b = t_of_log_ratio(lr);
        prop_assert!((0.0..=1.0).contains(&b));
        prop_assert!((t_of_log_ratio(lr) + t_of_log_ratio(-lr) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn t_of_log_ratio_matches_direct_form(lr in -30.0f64..30.0) {
        prop_assert!((t_of_log_ratio(lr) - transform_t(lr.exp()).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn model_t_values_lie_in_unit_interval(
        y in 0i64..60,
        beta in prop::collection::vec(-2.0f64..2.0, 2),
        nu in 0.0f64..3.0,
    ) {
        let x = Matrix::from_vec(1, 2, vec![1.0, 0.4]).unwrap();
        let model = gsm_core::cmp::CmpModel { covariates: &x };
        let th: Vec<f64> = beta.iter().cloned().chain([nu]).collect();
        let (up, down) = t_pair(&model, 0, &[y], 0, &th).unwrap();
        prop_assert!((0.0..=1.0).contains(&up) && (0.0..=1.0).contains(&down));
        if y == 0 {
            prop_assert_eq!(down, 0.0);
        }
    }

    #[test]
    fn rmse_squared_is_sd_squared_plus_bias_squared(
        est in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 2..40),
        truth in prop::collection::vec(-2.0f64..2.0, 3),
    ) {
        let se: Vec<Vec<f64>> = est.iter().map(|_| vec![0.5; 3]).collect();
        let names: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let rows = summarize(10, &names, &truth, &est, &se);
        for (j, row) in rows.iter().enumerate() {
            let mse = est.iter().map(|e| (e[j] - truth[j]).powi(2)).sum::<f64>() / est.len() as f64;
            prop_assert!((row.rmse * row.rmse - mse).abs() < 1e-10 * mse.max(1.0));
            prop_assert!((row.rmse * row.rmse - row.sd * row.sd - row.bias * row.bias).abs() < 1e-10 * mse.max(1.0));
            prop_assert!((0.0..=1.0).contains(&row.coverage));
            prop_assert!((row.asd - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn samplers_are_pure_functions_of_the_stream(seed in any::<u64>(), stream in any::<u64>()) {
        let run = || {
            let mut rng = RngStream::new(seed, stream);
            let c = sample_cmp(1.7, 0.6, &mut rng).unwrap();
            let l = Matrix::from_rows(&[vec![20.0, 10.0], vec![10.0, 30.0]]).unwrap();
            let t = sample_trunc_gauss(&[0.5, 0.3], &l, &mut rng).unwrap();
            let v = sample_vmf(&[0.0, 0.6, 0.8], 3.0, &mut rng).unwrap();
            (c, t, v)
        };
        prop_assert_eq!(run(), run());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn sandwich_is_symmetric_with_psd_meat(seed in any::<u64>(), nu in 0.2f64..1.5) {
        let x = cmp_design(80, seed).unwrap();
        let truth = CmpParams::new(vec![0.3, -0.1, 0.05, -0.05, 0.1, 0.0], nu).unwrap();
        let data = simulate_cmp(&x, &truth, &mut RngStream::new(seed, 0)).unwrap();
        let obj = CmpObjective::new(&data).unwrap();
        if let Ok(s) = estimate_sandwich(&obj, &truth.to_vec()) {
            prop_assert!(s.k_hat.max_asymmetry() <= 1e-12 * s.k_hat.max_abs().max(1.0));
            prop_assert!(s.i_hat.max_asymmetry() == 0.0 && s.j_hat.max_asymmetry() == 0.0);
            let (vals, _) = sym_eigen(&s.j_hat).unwrap();
            prop_assert!(*vals.last().unwrap() > -1e-12 * vals[0].abs());
        }
    }

    #[test]
    fn partition_round_trips(values in prop::collection::vec(-3.0f64..3.0, 2..8), k in 0usize..8) {
        let p = values.len();
        let names: Vec<String> = (0..p).map(|j| format!("p{j}")).collect();
        let k = k % p;
        let pv = ParamVec::new(values.clone(), names.clone()).unwrap().with_partition(&names[..k]).unwrap();
        prop_assert_eq!(pv.tested(), &(0..k).collect::<Vec<_>>()[..]);
        prop_assert_eq!(pv.nuisance(), (k..p).collect::<Vec<_>>());
        prop_assert_eq!(pv.values(), &values[..]);
    }
}
