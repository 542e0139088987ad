mod common;

use common::{brute_force, credited, load, oracle_instances, sinr_ok};
use v2xsim::allocator::{allocate_h45v, solve_optimal, AllocationInstance, SolverConfig};
use v2xsim::traffic::Priority;

#[test]
fn optimal_matches_brute_force() {
    for (k, inst) in oracle_instances(250, 11).iter().enumerate() {
        let r = solve_optimal(inst, SolverConfig::default());
        assert!(r.stats.optimal, "instance {k} hit the node budget");
        let (best, _) = brute_force(inst);
        assert_eq!(r.objective, best, "instance {k}");
        r.verify(inst).unwrap();
        sinr_ok(inst, &r).unwrap();
    }
}

#[test]
fn brute_force_hand_cases() {
    use v2xsim::allocator::parse_instance;
    // One normal RB, one group: the best MCS on one inner RB plus nothing on
    // top (an outer RB of the same group would need its own power share).
    let one = parse_instance(
        "ap 0\ndirection downlink\nsubchannels 1\nmcs 0 -inf 0\nmcs 1 0 50\nmcs 2 10 100\ngroup 1 normal 150 1 1 normal 1000\n",
    )
    .unwrap();
    let (obj, leaves) = brute_force(&one);
    assert_eq!(obj.classes[1].total_bits, 150);
    assert!(leaves > 1);
    let empty = parse_instance("ap 0\ndirection downlink\nsubchannels 2\nmcs default\n").unwrap();
    assert_eq!(brute_force(&empty).1, 1);
}

#[test]
fn heuristic_never_beats_optimal() {
    for (k, inst) in oracle_instances(300, 12).iter().enumerate() {
        let opt = solve_optimal(inst, SolverConfig::default());
        let h = allocate_h45v(inst);
        assert!(
            h.objective <= opt.objective,
            "instance {k}: {} > {}",
            h.objective,
            opt.objective
        );
    }
}

fn light(inst: &AllocationInstance) -> bool {
    load(inst) <= 0.5
}

#[test]
fn heuristic_quality_at_light_load() {
    let (mut opt, mut h, mut checked) = (0u64, 0u64, 0);
    for inst in oracle_instances(600, 13).iter().filter(|i| light(i)) {
        opt += credited(&solve_optimal(inst, SolverConfig::default()).objective);
        h += credited(&allocate_h45v(inst).objective);
        checked += 1;
    }
    assert!(checked >= 50, "only {checked} light instances");
    assert!(h as f64 >= 0.9 * opt as f64, "{h} < 0.9 * {opt}");
}

fn without_normal(inst: &AllocationInstance) -> AllocationInstance {
    let mut i = inst.clone();
    i.groups.retain(|g| g.priority == Priority::High);
    i
}

#[test]
fn high_class_is_unaffected_by_normal_class() {
    for inst in oracle_instances(300, 14) {
        let alone = without_normal(&inst);
        let h = allocate_h45v(&inst);
        let ha = allocate_h45v(&alone);
        let high = |r: &v2xsim::allocator::AllocationResult, i: &AllocationInstance| {
            i.groups
                .iter()
                .zip(&r.served)
                .filter(|(g, _)| g.priority == Priority::High)
                .map(|(g, s)| (g.group_id, *s))
                .collect::<Vec<_>>()
        };
        assert_eq!(high(&h, &inst), high(&ha, &alone));
        let o = solve_optimal(&inst, SolverConfig::default());
        let oa = solve_optimal(&alone, SolverConfig::default());
        assert_eq!(o.objective.classes[0], oa.objective.classes[0]);
    }
}

#[test]
fn solvers_are_deterministic() {
    for inst in oracle_instances(50, 15) {
        assert_eq!(
            allocate_h45v(&inst).placements,
            allocate_h45v(&inst).placements
        );
        let cfg = SolverConfig::default();
        assert_eq!(
            solve_optimal(&inst, cfg).placements,
            solve_optimal(&inst, cfg).placements
        );
    }
}
