use covers_core::env::{
    transform_action, transform_observation, transform_state, transform_task, Cell, Env, EnvConfig, EnvState,
    TaskGroup, TaskInstance,
};
use covers_core::group::GroupSpec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SAMPLES: usize = 1000;

fn random_state(rng: &mut ChaCha8Rng, task: &TaskInstance) -> EnvState {
    let n = task.grid;
    let mut cell = || Cell::new(rng.random_range(0..n), rng.random_range(0..n));
    let agent = cell();
    let object = task.object.map(|_| cell());
    EnvState {
        agent,
        object,
        gripper: rng.random_range(-1.0..1.0),
        steps: rng.random_range(0..50),
        success: false,
    }
}

/// Draws `samples` random (s, a, g) per group and checks that T, R and the
/// observation map commute with the group action. Returns the first
/// violation.
pub fn check_symmetry(samples: usize) -> Result<(), String> {
    let d2 = GroupSpec::d2();
    let config = EnvConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for group in TaskGroup::ALL {
        for i in 0..samples {
            let base = TaskInstance::new(group, d2.element(rng.random_range(0..4)).unwrap(), config.grid).unwrap();
            let g = d2.element(rng.random_range(0..4)).unwrap();
            let moved = transform_task(&base, g).unwrap();
            let mut env = Env::new(config.clone(), base).unwrap();
            let mut env_g = Env::new(config.clone(), moved).unwrap();
            let spatial = env.spatial().clone();

            let s = random_state(&mut rng, &base);
            let a: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.5..1.5));
            let (sg, ag) = (transform_state(&spatial, g, &s), transform_action(&spatial, g, &a));

            let next = env.transition(&s, &a);
            let next_g = env_g.transition(&sg, &ag);
            if next_g != transform_state(&spatial, g, &next) {
                return Err(format!("{group} sample {i}: T does not commute"));
            }
            if env.reward(&next) != env_g.reward(&next_g) {
                return Err(format!("{group} sample {i}: R does not commute"));
            }

            let init = env.initial_image().to_vec();
            let init_g = spatial.act_image(g, &init, 4).unwrap();
            env.set_state(s, init).unwrap();
            env_g.set_state(sg, init_g).unwrap();
            if env_g.observe() != transform_observation(&spatial, g, &env.observe()).unwrap() {
                return Err(format!("{group} sample {i}: observation does not commute"));
            }
        }
    }
    Ok(())
}
