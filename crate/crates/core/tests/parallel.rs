//! The data-parallel paths must not change any result: everything computed
//! on a multi-threaded pool equals the single-threaded computation bit for bit.
#![cfg(feature = "parallel")]

use conservnet::eval::evaluate;
use conservnet::experiment::ExperimentConfig;
use conservnet::nn::{layer_dims, MlpParams};
use conservnet::sweep::{sweep, SweepAxis};
use conservnet::systems::System;

fn on_threads<T: Send>(n: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap().install(f)
}

#[test]
fn generation_is_thread_count_independent() {
    for sys in System::ALL {
        let one = on_threads(1, || sys.generate(6, 20, 11).unwrap());
        let many = on_threads(4, || sys.generate(6, 20, 11).unwrap());
        assert_eq!(one, many, "{sys}");
    }
}

#[test]
fn evaluation_is_thread_count_independent() {
    let ds = System::S3.generate(12, 30, 5).unwrap();
    let model = MlpParams::init(&layer_dims(4, 16, 3), 6).unwrap();
    let one = on_threads(1, || evaluate(&model, &ds).unwrap());
    let many = on_threads(4, || evaluate(&model, &ds).unwrap());
    assert_eq!(one, many);
}

#[test]
fn sweep_cells_are_thread_count_independent() {
    let base =
        ExperimentConfig::from_text("n = 3\nm = 10\nwidth = 6\nhidden_layers = 2\nepochs = 3\nlr = 1e-3").unwrap();
    let values: Vec<String> = ["0.5", "1", "2"].iter().map(|s| s.to_string()).collect();
    let strip = |rows: Vec<(conservnet::sweep::SweepRow, Option<conservnet::experiment::RunOutcome>)>| {
        rows.into_iter().map(|(r, o)| (r.rho, r.sigma_bar, o.map(|o| o.model))).collect::<Vec<_>>()
    };
    let one = on_threads(1, || strip(sweep(&base, SweepAxis::Q, &values, None)));
    let many = on_threads(4, || strip(sweep(&base, SweepAxis::Q, &values, None)));
    assert_eq!(one, many);
}
