use chrono::NaiveDate;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::features::{make_windows, SchemaOptions};
use crate::model::{HeadInput, ModelConfig};
use crate::nn::Matrix;

const P: usize = 4;
const W: usize = 5;

/// f(x) = scale · Σ_j w_j x̄_j on every output step, x̄ the column means.
struct LinearMean {
    weights: Vec<f64>,
    scale: Vec<f64>,
}

fn col_means(window: &[f64], width: usize) -> Vec<f64> {
    let rows = window.len() / width;
    (0..width)
        .map(|c| (0..rows).map(|r| window[r * width + c]).sum::<f64>() / rows as f64)
        .collect()
}

impl Forecaster for LinearMean {
    fn window_len(&self) -> usize {
        P * self.weights.len()
    }

    fn forecast(&self, window: &[f64]) -> Result<Vec<f64>, ExplainError> {
        let m = col_means(window, self.weights.len());
        let s: f64 = m.iter().zip(&self.weights).map(|(a, b)| a * b).sum();
        Ok(self.scale.iter().map(|k| k * s).collect())
    }
}

/// Nonlinear with interactions; ignores column 2 and is symmetric in
/// columns 3 and 4.
struct Interacting;

impl Forecaster for Interacting {
    fn window_len(&self) -> usize {
        P * W
    }

    fn forecast(&self, window: &[f64]) -> Result<Vec<f64>, ExplainError> {
        let m = col_means(window, W);
        let a = (m[0] * m[1] + 0.5 * (m[3] + m[4])).tanh();
        let b = (m[0] - m[3] * m[4]).powi(2);
        Ok(vec![a, b, a * b])
    }
}

struct Sum<'a>(f64, &'a dyn Forecaster, f64, &'a dyn Forecaster);

impl Forecaster for Sum<'_> {
    fn window_len(&self) -> usize {
        self.1.window_len()
    }

    fn forecast(&self, window: &[f64]) -> Result<Vec<f64>, ExplainError> {
        let (f, g) = (self.1.forecast(window)?, self.3.forecast(window)?);
        Ok(f.iter().zip(&g).map(|(x, y)| self.0 * x + self.2 * y).collect())
    }
}

fn single_groups() -> Vec<FeatureGroup> {
    (0..W)
        .map(|c| FeatureGroup::new(format!("g{c}"), vec![c], GroupKind::Numeric))
        .collect()
}

fn paired_groups() -> Vec<FeatureGroup> {
    vec![
        FeatureGroup::new("a", vec![0, 2], GroupKind::Numeric),
        FeatureGroup::new("b", vec![1], GroupKind::Numeric),
        FeatureGroup::new("c", vec![3, 4], GroupKind::Numeric),
    ]
}

fn random_window(rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..P * W).map(|_| rng.random_range(-1.0..1.0)).collect()
}

#[test]
fn mask_extremes_and_single_group() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (t, b) = (random_window(&mut rng), random_window(&mut rng));
    let groups = single_groups();
    assert_eq!(mask(&t, &b, &groups, 0b11111).unwrap(), t);
    assert_eq!(mask(&t, &b, &groups, 0).unwrap(), b);
    let m = mask(&t, &b, &groups, 1 << 1).unwrap();
    for r in 0..P {
        for c in 0..W {
            let want = if c == 1 { t[r * W + c] } else { b[r * W + c] };
            assert_eq!(m[r * W + c], want);
        }
    }
    assert!(mask(&t, &b[1..], &groups, 0).is_err());
}

#[test]
fn identical_windows_give_zero_phi() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let t = random_window(&mut rng);
    let r = shapley(&Interacting, &t, &t, &single_groups(), ValueMode::Mean).unwrap();
    assert!(r.attributions.iter().all(|a| a.phi == 0.0));
}

#[test]
fn linear_model_matches_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let model = LinearMean {
        weights: vec![0.7, -1.3, 0.2, 2.5, -0.4],
        scale: vec![1.0, 0.5, 2.0],
    };
    for groups in [single_groups(), paired_groups()] {
        for _ in 0..5 {
            let (t, b) = (random_window(&mut rng), random_window(&mut rng));
            let (mt, mb) = (col_means(&t, W), col_means(&b, W));
            let r = shapley(&model, &t, &b, &groups, ValueMode::Mean).unwrap();
            for (g, a) in groups.iter().zip(&r.attributions) {
                // mean of the scale vector is 3.5 / 3
                let oracle: f64 = g
                    .columns
                    .iter()
                    .map(|&c| model.weights[c] * (mt[c] - mb[c]))
                    .sum::<f64>()
                    * 3.5
                    / 3.0;
                assert!((a.phi - oracle).abs() < 1e-10, "{} {} vs {}", g.name, a.phi, oracle);
            }
        }
    }
}

#[test]
fn efficiency_dummy_and_symmetry() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let (mut t, mut b) = (random_window(&mut rng), random_window(&mut rng));
        // columns 3 and 4 interchangeable
        for r in 0..P {
            t[r * W + 4] = t[r * W + 3];
            b[r * W + 4] = b[r * W + 3];
        }
        for mode in [ValueMode::Mean, ValueMode::Step(2)] {
            let r = shapley(&Interacting, &t, &b, &single_groups(), mode).unwrap();
            assert!(r.efficiency_gap().abs() < 1e-6);
            assert!(r.phi("g2").unwrap().abs() < 1e-10);
            assert!((r.phi("g3").unwrap() - r.phi("g4").unwrap()).abs() < 1e-10);
        }
    }
}

#[test]
fn group_equal_in_test_and_background_is_dummy() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (t, mut b) = (random_window(&mut rng), random_window(&mut rng));
    for r in 0..P {
        b[r * W + 1] = t[r * W + 1];
    }
    let r = shapley(&Interacting, &t, &b, &single_groups(), ValueMode::Mean).unwrap();
    assert!(r.phi("g1").unwrap().abs() < 1e-10);
}

#[test]
fn linearity_in_the_model() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let lin = LinearMean {
        weights: vec![1.0, 2.0, -1.0, 0.5, 0.25],
        scale: vec![1.0, -1.0, 3.0],
    };
    let (a, bcoef) = (0.3, -1.7);
    let combo = Sum(a, &lin, bcoef, &Interacting);
    let (t, b) = (random_window(&mut rng), random_window(&mut rng));
    let groups = paired_groups();
    let pf = shapley(&lin, &t, &b, &groups, ValueMode::Mean).unwrap();
    let pg = shapley(&Interacting, &t, &b, &groups, ValueMode::Mean).unwrap();
    let pc = shapley(&combo, &t, &b, &groups, ValueMode::Mean).unwrap();
    for ((f, g), c) in pf.attributions.iter().zip(&pg.attributions).zip(&pc.attributions) {
        assert!((c.phi - (a * f.phi + bcoef * g.phi)).abs() < 1e-9);
    }
}

#[test]
fn too_many_groups_suggests_sampling() {
    let model = LinearMean {
        weights: vec![1.0; 13],
        scale: vec![1.0],
    };
    let groups: Vec<_> = (0..13)
        .map(|c| FeatureGroup::new(format!("g{c}"), vec![c], GroupKind::Numeric))
        .collect();
    let w = vec![0.0; P * 13];
    let err = shapley(&model, &w, &w, &groups, ValueMode::Mean).unwrap_err();
    assert!(matches!(err, ExplainError::TooManyGroups { count: 13 }));
    assert!(err.to_string().contains("sampling"));
}

#[test]
fn groups_must_partition_columns() {
    let overlap = vec![
        FeatureGroup::new("a", vec![0, 1], GroupKind::Numeric),
        FeatureGroup::new("b", vec![1, 2], GroupKind::Numeric),
    ];
    assert!(validate_groups(&overlap, 3).is_err());
    let gap = vec![FeatureGroup::new("a", vec![0, 2], GroupKind::Numeric)];
    assert!(validate_groups(&gap, 3).is_err());
    assert!(validate_groups(&paired_groups(), W).is_ok());
}

#[test]
fn schema_groups() {
    let schema = FeatureSchema::default();
    let all: Vec<usize> = (0..schema.width()).collect();
    let groups = groups_for(&schema, &all);
    let names: Vec<&str> = groups.iter().map(|g| g.name.as_str()).collect();
    assert_eq!(names, ["request", "temperature", "holiday", "weekday", "month"]);
    validate_groups(&groups, 22).unwrap();
    assert_eq!(groups[3].columns, (3..10).collect::<Vec<_>>());
    let uni = groups_for(&schema, &[0]);
    assert_eq!(uni.len(), 1);
    assert_eq!(uni[0].columns, [0]);
    let dropped = groups_for(&FeatureSchema::with_options(SchemaOptions { drop_first_month: true, ..Default::default() }), &(0..21).collect::<Vec<_>>());
    assert_eq!(dropped[4].kind, GroupKind::OneHot { drop_first: true });
}

#[test]
fn representative_values() {
    let g = FeatureGroup::new("wd", vec![1, 2, 3], GroupKind::OneHot { drop_first: false });
    // width 4, two rows; last row has column 3 active
    let w = [0.5, 1.0, 0.0, 0.0, 0.7, 0.0, 0.0, 1.0];
    assert_eq!(g.representative(&w, 4), 2.0);
    let dropped = FeatureGroup::new("m", vec![1, 2, 3], GroupKind::OneHot { drop_first: true });
    assert_eq!(dropped.representative(&[0.0; 8], 4), 0.0);
    let num = FeatureGroup::new("x", vec![0], GroupKind::Numeric);
    assert!((num.representative(&w, 4) - 0.6).abs() < 1e-15);
}

#[test]
fn series_table_shape_and_efficiency() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let windows: Vec<Vec<f64>> = (0..20).map(|_| random_window(&mut rng)).collect();
    let groups = single_groups();
    let instances: Vec<(usize, &[f64])> = (0..14).map(|i| (i, windows[i].as_slice())).collect();
    let bg: Vec<&[f64]> = windows[14..].iter().map(Vec::as_slice).collect();
    let (table, reports) = shapley_series(&Interacting, &instances, &bg, &groups, ValueMode::Mean).unwrap();
    assert_eq!(table.len(), 70);
    for pair in table.rows.windows(2) {
        let gi = |r: &BeeswarmRow| groups.iter().position(|g| g.name == r.group).unwrap();
        assert!((gi(&pair[0]), pair[0].instance_id) < (gi(&pair[1]), pair[1].instance_id));
    }
    let mean_bg = bg
        .iter()
        .map(|b| ValueMode::Mean.reduce(&Interacting.forecast(b).unwrap()).unwrap())
        .sum::<f64>()
        / bg.len() as f64;
    for (id, w) in &instances {
        let fx = ValueMode::Mean.reduce(&Interacting.forecast(w).unwrap()).unwrap();
        let sum: f64 = table.rows.iter().filter(|r| r.instance_id == *id).map(|r| r.phi).sum();
        assert!((sum - (fx - mean_bg)).abs() < 1e-6);
    }
    assert_eq!(reports.len(), 14);

    let (single, _) = shapley_series(&Interacting, &instances[..1], &bg[..1], &groups, ValueMode::Mean).unwrap();
    let direct = shapley(&Interacting, instances[0].1, bg[0], &groups, ValueMode::Mean).unwrap();
    let direct_phi: Vec<f64> = direct.attributions.iter().map(|a| a.phi).collect();
    assert_eq!(single.rows.iter().map(|r| r.phi).collect::<Vec<_>>(), direct_phi);

    assert!(matches!(
        shapley_series(&Interacting, &[], &bg, &groups, ValueMode::Mean),
        Err(ExplainError::EmptyInstances)
    ));
    assert!(matches!(
        shapley_series(&Interacting, &instances, &[], &groups, ValueMode::Mean),
        Err(ExplainError::EmptyBackground)
    ));
}

#[test]
fn step_mode_out_of_range() {
    let w = vec![0.0; P * W];
    let err = shapley(&Interacting, &w, &w, &single_groups(), ValueMode::Step(3)).unwrap_err();
    assert!(matches!(err, ExplainError::BadStep { step: 3, horizon: 3 }));
}

fn midnight() -> NaiveDateTime {
    NaiveDate::from_ymd_opt(2023, 3, 1).unwrap().and_hms_opt(0, 0, 0).unwrap()
}

#[test]
fn attention_profile_uniform_and_delta() {
    let uniform = vec![1.0 / 96.0; 96];
    let p = AttentionProfile::from_weights([(midnight(), uniform.as_slice())]);
    for b in &p.hours {
        assert!((b.mean_weight - 1.0 / 96.0).abs() < 1e-15);
        assert!((b.share - 4.0 / 96.0).abs() < 1e-15);
    }
    let mut delta = vec![0.0; 96];
    delta[4 * 13 + 2] = 1.0;
    let p = AttentionProfile::from_weights([(midnight(), delta.as_slice())]);
    let top = p.hours.iter().max_by(|a, b| a.share.total_cmp(&b.share)).unwrap();
    assert_eq!(top.hour, 13);
    assert_eq!(top.share, 1.0);
}

fn small_model(attention: bool, seed: u64) -> ModelParams {
    let cfg = ModelConfig {
        input_width: 3,
        hidden: 4,
        lookback: 96,
        horizon: 2,
        attention,
        head_input: HeadInput::Context,
    };
    ModelParams::init(cfg, seed).unwrap()
}

#[test]
fn attention_profile_of_model_sums_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let data = Matrix::from_fn(96 + 2 + 49, 3, |_, _| rng.random_range(0.0..1.0));
    let windows = make_windows(data, 96, 2).unwrap().with_origin(midnight() + step() * 5);
    assert_eq!(windows.len(), 50);
    let p = attention_profile(&small_model(true, 3), &windows).unwrap();
    let total: f64 = p.hours.iter().map(|b| b.share).sum();
    assert!((total - 1.0).abs() < 1e-6);
    assert!(p.hours.iter().all(|b| b.mean_weight >= 0.0));
    assert!(matches!(
        attention_profile(&small_model(false, 3), &windows),
        Err(ExplainError::NoAttention)
    ));
}

#[test]
fn csv_exports_have_headers() {
    let table = BeeswarmTable {
        rows: vec![BeeswarmRow {
            instance_id: 3,
            group: "request".into(),
            value: 0.5,
            phi: -0.25,
        }],
    };
    let mut buf = Vec::new();
    table.write_csv(&mut buf).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap(), "instance_id,group,value,phi\n3,request,0.5,-0.25\n");
    let mut buf = Vec::new();
    AttentionProfile::from_weights([(midnight(), [1.0].as_slice())]).write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("hour,mean_weight,share\n0,1,1\n1,0,0\n"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn efficiency_on_real_model(seed in 0u64..1000) {
        let model = small_model(true, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t: Vec<f64> = (0..96 * 3).map(|_| rng.random_range(0.0..1.0)).collect();
        let b: Vec<f64> = (0..96 * 3).map(|_| rng.random_range(0.0..1.0)).collect();
        let groups = vec![
            FeatureGroup::new("request", vec![0], GroupKind::Numeric),
            FeatureGroup::new("temperature", vec![1], GroupKind::Numeric),
            FeatureGroup::new("holiday", vec![2], GroupKind::Binary),
        ];
        let r = shapley(&model, &t, &b, &groups, ValueMode::Mean).unwrap();
        prop_assert!(r.efficiency_gap().abs() < 1e-6);
        let direct = ValueMode::Mean.reduce(&model.predict(&t).unwrap()).unwrap();
        prop_assert_eq!(r.prediction, direct);
    }
}
