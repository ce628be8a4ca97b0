mod common;

use ctxadapt_core::kernel::{CommandResult, Origin};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;

fn check_world(seed: u64, len: usize) -> Result<(), TestCaseError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (hosts, links) = random_net(&mut rng, 5);
    let mut k = kernel(hosts, links);
    let mut fresh = 0;
    for _ in 0..len {
        let cmd = random_command(&mut rng, &k, &mut fresh);
        let before = k.fingerprint();
        let origin = if rng.gen_bool(0.5) { Origin::Platform } else { Origin::App };
        match k.apply(cmd.clone(), origin) {
            CommandResult::Applied => {
                let (comps, conns) = reconstruct(&k);
                prop_assert_eq!(&k.model().components, &comps, "after {}", cmd);
                prop_assert_eq!(&k.model().connectors, &conns, "after {}", cmd);
                prop_assert!(k.model().is_consistent());
            }
            CommandResult::Aborted(_) | CommandResult::Deferred => {
                prop_assert_eq!(before, k.fingerprint(), "{} left a trace in the runtime", cmd);
            }
        }
        if rng.gen_bool(0.3) {
            random_tick(&mut rng, &mut k);
            let (comps, conns) = reconstruct(&k);
            prop_assert_eq!(&k.model().components, &comps);
            prop_assert_eq!(&k.model().connectors, &conns);
        }
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn model_matches_registry_walk(seed in any::<u64>(), len in 1usize..=20) {
        check_world(seed, len)?;
    }
}
