// scratch: per-iteration trace via env var
use drkf::psd::SymMatrix;
use drkf::sdp::{self, SolveOpts};
use drkf::filters::AmbiguityRadii;
use nalgebra::DMatrix;

fn main() {
    let stage = sdp::StageData {
        a: DMatrix::from_element(1, 1, 1.0),
        c: DMatrix::from_element(1, 1, 1.0),
        sigma_w_hat: SymMatrix::scalar(1.0),
        sigma_v_hat: SymMatrix::scalar(1.0),
    };
    let radii = AmbiguityRadii { theta_w: 0.01, theta_v: 0.01, theta_x0: 0.0 };
    let p = sdp::build_stage_sdp(&stage, &SymMatrix::scalar(1.0), &radii).unwrap();
    let mut opts = SolveOpts::default();
    opts.max_iter = 60;
    match sdp::solve_sdp(&p, &opts) {
        Ok(sol) => println!("OK obj={} iters={}", -sol.objective, sol.iterations),
        Err(e) => println!("ERR {e}"),
    }
}
