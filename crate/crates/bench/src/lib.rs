//! Fixtures shared by the criterion benches.

use bfsa::geometry::blocks_for_size;
use bfsa::synthetic::uniform_points;
use bfsa::{assemble, build_plan, BfsaMatrix, KernelSpec, PartitionPlan, Point};

pub const BLOCK_SIZE: usize = 128;
pub const LANDMARKS: usize = 32;
pub const TARGETS: usize = 512;

pub struct Fixture {
    pub spec: KernelSpec,
    pub points: Vec<Point>,
    pub targets: Vec<Point>,
    pub y: Vec<f64>,
    pub plan: PartitionPlan,
    pub k: BfsaMatrix,
}

impl Fixture {
    /// Uniform points with a smooth response, partitioned like the scaling
    /// runs.
    pub fn new(n: usize) -> Fixture {
        let spec = KernelSpec::stationary(1.0, 0.1, 1.0, 1e-3);
        let points = uniform_points(n, n as u64);
        let targets = uniform_points(TARGETS, n as u64 + 1);
        let y = points.iter().map(|p| (7.0 * p[0]).sin() + (5.0 * p[1]).cos()).collect();
        let plan = build_plan(&points, blocks_for_size(n, BLOCK_SIZE), LANDMARKS.min(n)).expect("plan");
        let k = assemble(&spec, &points, &plan).expect("assemble");
        Fixture { spec, points, targets, y, plan, k }
    }
}
