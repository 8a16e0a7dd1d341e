//! Shared fixtures for the criterion benchmarks.

use ris_inr::channel::ris_phase_random;
use ris_inr::experiment::{desk_model, Setup};
use ris_inr::forward::build_forward;
use ris_inr::scene::generate_scene;
use ris_inr::{Complex64, ForwardOperator, ImageGrid, InrModel, PathMask, Scene, SceneKind, SystemConfig};

pub struct Fixture {
    pub system: SystemConfig,
    pub grid: ImageGrid,
    pub scene: Scene,
    pub operator: ForwardOperator,
    pub y: Vec<Complex64>,
    pub model: InrModel,
}

/// Desk-scale problem with a random phase book and noiseless data.
pub fn desk_fixture() -> Fixture {
    let setup = Setup::desk();
    let system = setup.system();
    let grid = system.grid();
    let book = ris_phase_random(setup.configurations, system.n_ris(), 7).expect("valid phase book");
    let operator = build_forward(&system, &book, PathMask::ALL).expect("valid geometry");
    let scene = generate_scene(SceneKind::StickFigure, &grid, 7, system.sigma_max());
    let y: Vec<Complex64> = operator.apply(scene.sigma.as_slice().into()).expect("matching sizes").to_vec();
    let model = InrModel::new(&desk_model(), system.sigma_max(), 7).expect("valid spec");
    Fixture { system, grid, scene, operator, y, model }
}
