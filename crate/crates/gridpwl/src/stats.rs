//! Flow and injection error statistics of a trained predictor on a test
//! set, with box-plot summaries.

use std::io::Write;

use anyhow::Result;
use gridpwl_core::network::{FlowBlock, Network};
use gridpwl_core::pwlnet::{FlowPredictor, PwlError};
use gridpwl_core::sampler::SampleSet;
use serde::Serialize;

/// Tukey box-plot numbers. Quartiles interpolate linearly between order
/// statistics; whiskers reach the most extreme points within 1.5 IQR of
/// the box (never inside it), everything beyond is listed as an outlier.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoxStats {
    pub count: usize,
    pub mean: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub outliers: Vec<f64>,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = p * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

impl BoxStats {
    /// Summary of `values`; `None` when empty or any value is not finite.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let mut s = values.to_vec();
        s.sort_by(f64::total_cmp);
        let (q1, median, q3) = (quantile(&s, 0.25), quantile(&s, 0.5), quantile(&s, 0.75));
        let iqr = q3 - q1;
        let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
        let inside = s.iter().filter(|&&v| v >= lo_fence && v <= hi_fence);
        let whisker_low = inside.clone().cloned().fold(q1, f64::min);
        let whisker_high = inside.cloned().fold(q3, f64::max);
        Some(Self {
            count: s.len(),
            mean: s.iter().sum::<f64>() / s.len() as f64,
            min: s[0],
            q1,
            median,
            q3,
            max: s[s.len() - 1],
            whisker_low,
            whisker_high,
            outliers: s.iter().cloned().filter(|&v| v < lo_fence || v > hi_fence).collect(),
        })
    }
}

/// Per-sample errors. Flow errors are `|predicted − exact| / rating` in
/// percent, averaged or maximized over the flows of one sample; the
/// injection error is the RMSE of the `2n` injections in p.u.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ErrorStats {
    pub avg_flow: Vec<f64>,
    pub max_flow: Vec<f64>,
    pub avg_active: Vec<f64>,
    pub max_active: Vec<f64>,
    pub avg_reactive: Vec<f64>,
    pub max_reactive: Vec<f64>,
    pub injection_rmse: Vec<f64>,
}

impl ErrorStats {
    pub fn len(&self) -> usize {
        self.avg_flow.len()
    }

    pub fn is_empty(&self) -> bool {
        self.avg_flow.is_empty()
    }

    /// Mean over samples of the per-sample average flow error.
    pub fn mean_avg_flow(&self) -> f64 {
        self.avg_flow.iter().sum::<f64>() / self.len().max(1) as f64
    }

    pub fn series(&self) -> [(&'static str, &[f64]); 7] {
        [
            ("avg_flow_error_pct", &self.avg_flow),
            ("max_flow_error_pct", &self.max_flow),
            ("avg_active_error_pct", &self.avg_active),
            ("max_active_error_pct", &self.max_active),
            ("avg_reactive_error_pct", &self.avg_reactive),
            ("max_reactive_error_pct", &self.max_reactive),
            ("injection_rmse_pu", &self.injection_rmse),
        ]
    }

    pub fn summary(&self) -> Vec<(&'static str, BoxStats)> {
        self.series()
            .into_iter()
            .filter_map(|(name, v)| BoxStats::of(v).map(|b| (name, b)))
            .collect()
    }

    /// Box-plot summary, one row per statistic; outliers `;`-separated.
    pub fn write_summary_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "metric", "count", "mean", "min", "q1", "median", "q3", "max", "whisker_low", "whisker_high", "outliers",
        ])?;
        for (name, b) in self.summary() {
            let outliers: Vec<String> = b.outliers.iter().map(|v| v.to_string()).collect();
            w.write_record([
                name.to_string(),
                b.count.to_string(),
                b.mean.to_string(),
                b.min.to_string(),
                b.q1.to_string(),
                b.median.to_string(),
                b.q3.to_string(),
                b.max.to_string(),
                b.whisker_low.to_string(),
                b.whisker_high.to_string(),
                outliers.join(";"),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// One row per test sample.
    pub fn write_samples_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let series = self.series();
        let mut header = vec!["sample".to_string()];
        header.extend(series.iter().map(|(n, _)| n.to_string()));
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut row = vec![i.to_string()];
            row.extend(series.iter().map(|(_, v)| v[i].to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Errors of `model` on every sample of `test`.
pub fn eval_pf_error<M: FlowPredictor>(net: &Network, model: &M, test: &SampleSet) -> Result<ErrorStats, PwlError> {
    let l = net.branch_count();
    let ratings: Vec<f64> = net.branches().iter().map(|b| b.rating).collect();
    let fixed = gridpwl_core::network::FixedMatrices::build(net);
    let mut st = ErrorStats::default();
    for (x, target) in test.inputs.iter().zip(&test.targets_power) {
        let pred = model.predict_flows(x)?;
        let (mut sum, mut mx) = ([0.0; 2], [0.0f64; 2]);
        for block in FlowBlock::ALL {
            let kind = usize::from(!block.is_active());
            for (k, rating) in ratings.iter().enumerate() {
                let r = block.index(k, l);
                let e = 100.0 * (pred[r] - target.z_pf[r]).abs() / rating;
                sum[kind] += e;
                mx[kind] = mx[kind].max(e);
            }
        }
        let per_kind = (2 * l) as f64;
        st.avg_flow.push((sum[0] + sum[1]) / (2.0 * per_kind));
        st.max_flow.push(mx[0].max(mx[1]));
        st.avg_active.push(sum[0] / per_kind);
        st.max_active.push(mx[0]);
        st.avg_reactive.push(sum[1] / per_kind);
        st.max_reactive.push(mx[1]);
        let inj = fixed.injections(&pred);
        let se: f64 = inj.iter().zip(&target.z_inj).map(|(a, b)| (a - b) * (a - b)).sum();
        st.injection_rmse.push((se / inj.len() as f64).sqrt());
    }
    Ok(st)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::case::{parse_case, CASE14};
    use gridpwl_core::acflow::OperatingPoint;
    use gridpwl_core::pwlnet::PwlModel;
    use gridpwl_core::sampler::generate;
    use proptest::prelude::*;

    struct Exact<'a>(&'a Network);

    impl FlowPredictor for Exact<'_> {
        fn predict_flows(&self, x: &OperatingPoint) -> Result<Vec<f64>, PwlError> {
            Ok(gridpwl_core::acflow::branch_flows(x, self.0).z_pf)
        }
    }

    #[test]
    fn exact_predictor_has_zero_error() {
        let net = parse_case(CASE14).unwrap().network;
        let st = eval_pf_error(&net, &Exact(&net), &generate(&net, 20, 1)).unwrap();
        assert_eq!(st.len(), 20);
        for (_, v) in st.series() {
            assert!(v.iter().all(|&e| e.abs() < 1e-12));
        }
    }

    #[test]
    fn first_order_error_is_positive_and_consistent() {
        let net = parse_case(CASE14).unwrap().network;
        let test = generate(&net, 30, 2);
        let m = PwlModel::first_order(&net, 3);
        let st = eval_pf_error(&net, &m, &test).unwrap();
        assert!(st.avg_flow.iter().all(|&e| e > 0.0));
        // independent recomputation of one sample
        let x = &test.inputs[4];
        let pred = m.predict_flows(x).unwrap();
        let l = net.branch_count();
        let errs: Vec<f64> = (0..4 * l)
            .map(|r| 100.0 * (pred[r] - test.targets_power[4].z_pf[r]).abs() / net.branches()[r % l].rating)
            .collect();
        let avg = errs.iter().sum::<f64>() / errs.len() as f64;
        assert!((st.avg_flow[4] - avg).abs() < 1e-9);
        assert_eq!(st.max_flow[4], errs.iter().cloned().fold(0.0, f64::max));
        for i in 0..st.len() {
            assert!((st.avg_flow[i] - 0.5 * (st.avg_active[i] + st.avg_reactive[i])).abs() < 1e-9);
            assert!(st.max_flow[i] >= st.avg_flow[i]);
        }
    }

    #[test]
    fn box_stats_by_hand() {
        let b = BoxStats::of(&[1.0, 2.0, 3.0, 4.0, 100.0]).unwrap();
        assert_eq!((b.q1, b.median, b.q3), (2.0, 3.0, 4.0));
        assert_eq!((b.whisker_low, b.whisker_high), (1.0, 4.0));
        assert_eq!(b.outliers, vec![100.0]);
        assert_eq!(b.mean, 22.0);
        let one = BoxStats::of(&[5.0]).unwrap();
        assert_eq!((one.q1, one.median, one.q3, one.whisker_low), (5.0, 5.0, 5.0, 5.0));
        assert!(BoxStats::of(&[]).is_none());
        assert!(BoxStats::of(&[1.0, f64::NAN]).is_none());
    }

    #[test]
    fn summary_csv_has_one_row_per_metric() {
        let st = ErrorStats {
            avg_flow: vec![1.0, 2.0],
            max_flow: vec![3.0, 4.0],
            avg_active: vec![1.0, 1.0],
            max_active: vec![1.0, 1.0],
            avg_reactive: vec![1.0, 3.0],
            max_reactive: vec![2.0, 4.0],
            injection_rmse: vec![0.1, 0.2],
        };
        let mut buf = Vec::new();
        st.write_summary_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 8);
        assert!(text.lines().nth(1).unwrap().starts_with("avg_flow_error_pct,2,1.5,1,1.25,1.5,1.75,2,1,2,"));
        let mut buf = Vec::new();
        st.write_samples_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 3);
    }

    proptest! {
        #[test]
        fn box_stats_are_ordered(values in proptest::collection::vec(-1e3f64..1e3, 1..60)) {
            let b = BoxStats::of(&values).unwrap();
            prop_assert!(b.min <= b.q1 && b.q1 <= b.median && b.median <= b.q3 && b.q3 <= b.max);
            prop_assert!(b.whisker_low <= b.q1 + 1e-12 && b.whisker_high >= b.q3 - 1e-12);
            prop_assert_eq!(b.count, values.len());
            prop_assert!(b.outliers.len() < values.len());
        }
    }
}
