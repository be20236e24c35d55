//! Finite-difference validation of the analytic gradients, including the
//! straight-through estimator and the stop-gradient routing of the two
//! quantizer loss terms: codebook loss reaches only the codebook entries,
//! commitment loss reaches only the encoder side.

mod common;

use std::time::Instant;

use common::{fd_check_all_params, small_net_config, three_frame_batch};
use vqp_core::net::Model;

const BETA: f64 = 0.25;

#[test]
fn every_parameter_gradient_matches_central_differences() {
    let start = Instant::now();
    let cfg = small_net_config();
    let batch = three_frame_batch(&cfg);
    let mut model = Model::new(cfg, 11).unwrap();

    let report = fd_check_all_params(&mut model, &batch, BETA);
    assert!(report.n_checked > 1000, "only {} parameters checked", report.n_checked);
    assert!(
        report.max_rel_err < 1e-4,
        "worst relative error {} at {} (budget 1e-4)",
        report.max_rel_err,
        report.worst_param
    );
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 60.0, "gradient check took {elapsed:?}, budget 60 s");
}

#[test]
fn gradients_match_under_partial_masking() {
    // same check with the last frame masked out, so the masked-reconstruction
    // path is validated too
    let cfg = small_net_config();
    let mut batch = three_frame_batch(&cfg);
    batch.mask[[0, 2]] = 0.0;
    let mut model = Model::new(cfg, 13).unwrap();
    let report = fd_check_all_params(&mut model, &batch, BETA);
    assert!(
        report.max_rel_err < 1e-4,
        "worst relative error {} at {}",
        report.max_rel_err,
        report.worst_param
    );
}

#[test]
fn codebook_loss_routes_only_to_entries() {
    let cfg = small_net_config();
    let batch = three_frame_batch(&cfg);
    let mut model = Model::new(cfg, 11).unwrap();

    model.forward_train(&batch, BETA).unwrap();
    model.zero_grads();
    model.backward_weighted(0.0, 1.0, 0.0).unwrap();

    // every network parameter gradient is exactly zero: z_e is a constant
    // for this term
    model.visit_grads(&mut |name, g| {
        assert!(
            g.iter().all(|&v| v == 0.0),
            "codebook loss leaked into {name}"
        );
    });
    assert!(
        model.book_grad.iter().any(|&v| v != 0.0),
        "codebook loss produced no codebook gradient"
    );
}

#[test]
fn commitment_loss_routes_only_to_the_encoder() {
    let cfg = small_net_config();
    let batch = three_frame_batch(&cfg);
    let mut model = Model::new(cfg, 11).unwrap();

    model.forward_train(&batch, BETA).unwrap();
    model.zero_grads();
    model.backward_weighted(0.0, 0.0, 1.0).unwrap();

    // the codebook receives exactly nothing: entries are constants here
    assert!(
        model.book_grad.iter().all(|&v| v == 0.0),
        "commitment loss leaked into the codebook"
    );
    // encoder-side parameters receive gradient; decoder-side stay zero
    let mut enc_nonzero = false;
    model.visit_grads(&mut |name, g| {
        let any = g.iter().any(|&v| v != 0.0);
        if name.starts_with("enc.") && any {
            enc_nonzero = true;
        }
        if name.starts_with("dec.") || name.starts_with("gru") || name.starts_with("emb") {
            assert!(!any, "commitment loss leaked into {name}");
        }
    });
    assert!(enc_nonzero, "commitment loss never reached the encoder");
}

#[test]
fn reconstruction_loss_never_touches_the_codebook() {
    // straight-through: the decoder's adjoint crosses the quantizer to z_e,
    // not to the selected entries
    let cfg = small_net_config();
    let batch = three_frame_batch(&cfg);
    let mut model = Model::new(cfg, 11).unwrap();

    model.forward_train(&batch, BETA).unwrap();
    model.zero_grads();
    model.backward_weighted(1.0, 0.0, 0.0).unwrap();

    assert!(
        model.book_grad.iter().all(|&v| v == 0.0),
        "reconstruction gradient reached the codebook"
    );
    let mut enc_nonzero = false;
    model.visit_grads(&mut |name, g| {
        if name.starts_with("enc.") && g.iter().any(|&v| v != 0.0) {
            enc_nonzero = true;
        }
    });
    assert!(enc_nonzero, "straight-through gradient never reached the encoder");
}
