//! Full-batch gradient flow on the S-curve setup: with one batch holding
//! every point the Euler step moves each particle toward its optimal match,
//! so W2 to the target can only go down.

use mbot::apps::flow::{gradient_flow, s_shape_setup, FlowConfig};
use mbot::SolverKind;

#[test]
fn full_batch_flow_never_increases_w2() {
    let n = 200;
    let (init, target) = s_shape_setup(n, 21).unwrap();
    let config = FlowConfig {
        loss: SolverKind::exact_ot(),
        num_batches: 1,
        batch_size: n,
        learning_rate: 0.001,
        steps: 100,
        seed: 21,
        eval_every: 1,
    };
    let trajectory = gradient_flow(&init, &target, &config).unwrap();
    assert_eq!(trajectory.w2_curve.len(), 101);
    for w in trajectory.w2_curve.windows(2) {
        assert!(w[1].1 <= w[0].1 + 1e-12, "W2 rose from {} to {} at step {}", w[0].1, w[1].1, w[1].0);
    }
    let (first, last) = (trajectory.w2_curve[0].1, trajectory.final_w2());
    assert!(last < first, "no progress: {first} -> {last}");
}
