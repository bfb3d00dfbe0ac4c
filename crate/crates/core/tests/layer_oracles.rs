//! Layer outputs against direct transcriptions of their defining equations.

mod support;

use support::oracles::{attention_max_error, conv_max_error, lstm_max_error};

const TOLERANCE: f64 = 1e-12;

#[test]
fn conv1d_same_matches_nested_loops_on_100_shapes() {
    let err = conv_max_error(100);
    assert!(err <= TOLERANCE, "{err:e}");
}

#[test]
fn lstm_matches_gate_equations_on_20_seeds() {
    let err = lstm_max_error(20);
    assert!(err <= TOLERANCE, "{err:e}");
}

#[test]
fn attention_lstm_matches_alignment_equations_on_20_seeds() {
    let err = attention_max_error(20);
    assert!(err <= TOLERANCE, "{err:e}");
}
