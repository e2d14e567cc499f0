//! Whole-pipeline properties over seeded random programs.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use muslh::absint::{config_step, fixpoint, initial_config, prepare, AbsConfig, Mode};
use muslh::hardener::{harden_linked, is_idempotent};
use muslh::lang::{parse_program, Policy, Program};
use muslh::oracle::gen::{random_program, random_source, GenParams};
use muslh::oracle::inclusion::check_random_trace;
use muslh::oracle::{check_sni, check_ss, random_initial, replay_sni, replay_ss, Bounds, Verdict};

const N: u32 = 3;

fn program(seed: u64) -> (Program, Policy) {
    let (p, policy) = random_program(&mut ChaCha8Rng::seed_from_u64(seed), &GenParams::default());
    (prepare(&p, &policy, N).unwrap(), policy)
}

fn cheap() -> ProptestConfig {
    ProptestConfig::with_cases(64)
}

fn costly() -> ProptestConfig {
    ProptestConfig::with_cases(16)
}

proptest! {
    #![proptest_config(cheap())]

    #[test]
    fn rendering_round_trips(seed in any::<u64>()) {
        let src = random_source(&mut ChaCha8Rng::seed_from_u64(seed), &GenParams::default());
        let p = parse_program(&src).unwrap();
        prop_assert_eq!(parse_program(&p.render()).unwrap(), p);
    }

    #[test]
    fn fixpoints_are_closed_under_the_step(seed in any::<u64>()) {
        let (p, policy) = program(seed);
        for mode in [Mode::Seq, Mode::Spec] {
            let fx = fixpoint(&p, &initial_config(&p, &policy), mode, &AbsConfig::for_width(N)).unwrap();
            prop_assert!(config_step(&p, &fx.config, mode).leq(&fx.config));
        }
    }

    #[test]
    fn hardening_is_idempotent(seed in any::<u64>()) {
        let (p, policy) = program(seed);
        let o = harden_linked(&p, &policy, AbsConfig::for_width(N)).unwrap();
        prop_assert!(is_idempotent(&o.hardened, &policy, &o.config).unwrap());
    }

    #[test]
    fn concrete_traces_stay_in_the_speculative_fixpoint(seed in any::<u64>()) {
        let (p, policy) = program(seed);
        let fx = fixpoint(&p, &initial_config(&p, &policy), Mode::Spec, &AbsConfig::for_width(N)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
        for _ in 0..8 {
            let s0 = random_initial(&p, &policy, &mut rng).state;
            prop_assert_eq!(check_random_trace(&p, &fx, &s0, &mut rng, 0.5, 64).err(), None);
        }
    }
}

proptest! {
    #![proptest_config(costly())]

    #[test]
    fn violations_replay(seed in any::<u64>()) {
        let (p, policy) = program(seed);
        let bounds = Bounds::for_width(N);
        if let Verdict::Violation { witness } = check_ss(&p, &policy, &bounds) {
            prop_assert!(replay_ss(&p, &policy, &witness, bounds.obs_bits));
        }
        if let Verdict::Violation { witness } = check_sni(&p, &policy, &bounds) {
            prop_assert!(replay_sni(&p, &policy, &witness, bounds.obs_bits));
        }
    }

    #[test]
    fn empty_hardening_list_means_speculative_safety(seed in any::<u64>()) {
        let (p, policy) = program(seed);
        let o = harden_linked(&p, &policy, AbsConfig::for_width(N)).unwrap();
        if o.list().is_empty() {
            prop_assert!(check_ss(&p, &policy, &Bounds::for_width(N)).is_pass());
        }
        prop_assert!(check_ss(&o.hardened, &policy, &Bounds::for_width(N)).is_pass());
    }

    #[test]
    fn checks_are_deterministic(seed in any::<u64>()) {
        let (p, policy) = program(seed);
        let bounds = Bounds::for_width(N);
        prop_assert_eq!(check_ss(&p, &policy, &bounds), check_ss(&p, &policy, &bounds));
        prop_assert_eq!(check_sni(&p, &policy, &bounds), check_sni(&p, &policy, &bounds));
    }
}
