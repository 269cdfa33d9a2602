//! Experimental games: the bilinear illustrative game, the network Cournot game and a
//! quadratic game with a closed-form equilibrium.

mod cournot;
mod illustrative;
mod quadratic;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

pub use cournot::{
    build_cournot, cournot_graph, expected_root, load_fixture, random_instance, random_participation, CournotGame,
    CournotInstance, CournotOracle, CournotParams, InstanceSource, DEFAULT_FIXTURE, TOTAL_MIN, X_MIN,
};
pub use illustrative::{build_illustrative, IllustrativeParams};
pub use quadratic::{build_quadratic_kkt, quadratic_data, solve_kkt, KktSolution, QuadraticParams};

use crate::error::{Error, Result};
use crate::game::GameProblem;

/// Scenario name plus its parameters, as found in experiment configurations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GameSpec {
    pub scenario: String,
    #[serde(default)]
    pub scenario_params: serde_json::Value,
}

/// A built game with its known solution, when there is one.
pub struct Scenario {
    pub game: GameProblem,
    pub reference: Option<DVector<f64>>,
    pub reference_lambda: Option<f64>,
}

fn params<T: Default + for<'de> Deserialize<'de>>(v: &serde_json::Value) -> Result<T> {
    if v.is_null() {
        return Ok(T::default());
    }
    serde_json::from_value(v.clone()).map_err(|e| Error::InvalidParameter(format!("scenario_params: {e}")))
}

pub const SCENARIOS: [&str; 3] = ["illustrative", "cournot", "quadratic-kkt"];

pub fn build_game(spec: &GameSpec) -> Result<Scenario> {
    match spec.scenario.as_str() {
        "illustrative" => {
            let game = build_illustrative(&params(&spec.scenario_params)?)?;
            Ok(Scenario { game, reference: Some(DVector::zeros(2)), reference_lambda: None })
        }
        "cournot" => {
            let c = build_cournot(&params(&spec.scenario_params)?)?;
            Ok(Scenario { game: c.game, reference: None, reference_lambda: None })
        }
        "quadratic-kkt" => {
            let (game, sol) = build_quadratic_kkt(&params(&spec.scenario_params)?)?;
            Ok(Scenario { game, reference: Some(sol.x), reference_lambda: Some(sol.lambda) })
        }
        other => Err(Error::UnknownScenario(other.to_string())),
    }
}
