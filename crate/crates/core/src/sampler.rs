//! Seeded datasets of operating points with exact targets.
//!
//! Non-slack voltages are drawn from `U[v_lo, v_hi]` and non-slack nodal
//! angles from `U[θ_case - span, θ_case + span]`; the slack bus keeps its
//! case voltage and angle. Angle differences are derived from the nodal
//! angles. Sample `i` draws from its own stream `(seed, i)`, voltages first
//! and then angles, in bus order.

use alloc::vec::Vec;
use core::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::acflow::{branch_flows, common_terms, CommonTerms, OperatingPoint, PowerVariables};
use crate::network::Network;
use crate::rng::{streams, Stream};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingBox {
    pub v_lo: f64,
    pub v_hi: f64,
    /// Half-width of the nodal angle interval, radians.
    pub angle_span: f64,
}

impl Default for SamplingBox {
    fn default() -> Self {
        Self {
            v_lo: 0.94,
            v_hi: 1.06,
            angle_span: PI / 6.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub inputs: Vec<OperatingPoint>,
    pub targets_common: Vec<CommonTerms>,
    pub targets_power: Vec<PowerVariables>,
    pub seed: u64,
    /// Training fraction used by [`split`].
    pub split: f64,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Subset by index, preserving the given order.
    pub fn select(&self, idx: &[usize]) -> SampleSet {
        SampleSet {
            inputs: idx.iter().map(|&i| self.inputs[i].clone()).collect(),
            targets_common: idx.iter().map(|&i| self.targets_common[i].clone()).collect(),
            targets_power: idx.iter().map(|&i| self.targets_power[i].clone()).collect(),
            seed: self.seed,
            split: self.split,
        }
    }
}

/// Draws one operating point from stream `(seed, index)`.
pub fn draw_point(net: &Network, bx: &SamplingBox, seed: u64, index: u64) -> OperatingPoint {
    let mut rng = Stream::new(seed, index);
    let slack = net.slack();
    let v = net
        .buses()
        .iter()
        .enumerate()
        .map(|(i, b)| if i == slack { b.v_setpoint } else { rng.uniform(bx.v_lo, bx.v_hi) })
        .collect();
    let theta = net
        .buses()
        .iter()
        .enumerate()
        .map(|(i, b)| {
            if i == slack {
                b.theta_setpoint
            } else {
                rng.uniform(b.theta_setpoint - bx.angle_span, b.theta_setpoint + bx.angle_span)
            }
        })
        .collect();
    OperatingPoint::new(net, v, theta)
}

pub fn generate(net: &Network, count: usize, seed: u64) -> SampleSet {
    generate_in(net, &SamplingBox::default(), count, seed)
}

pub fn generate_in(net: &Network, bx: &SamplingBox, count: usize, seed: u64) -> SampleSet {
    assert!(count >= 1, "sample count must be at least 1");
    let inputs: Vec<OperatingPoint> = (0..count as u64)
        .map(|i| draw_point(net, bx, seed, i))
        .collect();
    let targets_common = inputs.iter().map(|x| common_terms(net, x)).collect();
    let targets_power = inputs.iter().map(|x| branch_flows(x, net)).collect();
    SampleSet {
        inputs,
        targets_common,
        targets_power,
        seed,
        split: 0.9,
    }
}

/// Seeded shuffle of the indices, then the first `floor(fraction · len)`
/// go to training and the rest to testing. Each part keeps ascending index
/// order.
pub fn split_indices(len: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    assert!(fraction > 0.0 && fraction < 1.0, "split fraction must be in (0, 1)");
    let mut idx: Vec<usize> = (0..len).collect();
    Stream::new(seed, streams::SPLIT).shuffle(&mut idx);
    let n_train = libm::floor(fraction * len as f64) as usize;
    let mut train = idx[..n_train].to_vec();
    let mut test = idx[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

pub fn split(set: &SampleSet, fraction: f64) -> (SampleSet, SampleSet) {
    let (train, test) = split_indices(set.len(), fraction, set.seed);
    let mut a = set.select(&train);
    let mut b = set.select(&test);
    a.split = fraction;
    b.split = fraction;
    (a, b)
}
