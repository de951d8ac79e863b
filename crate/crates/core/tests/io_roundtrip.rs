use proptest::prelude::*;

use popdispatch_core::dynamics::CommGraph;
use popdispatch_core::game::{Fleet, GeneratorParams};
use popdispatch_core::grid::{Bus, Line, RadialNetwork};
use popdispatch_core::io;
use popdispatch_core::scenario::LoadProfile;
use popdispatch_core::synthetic;

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![0.0f64..1e6, (0u32..10_000).prop_map(|v| v as f64 / 8.0), Just(0.1), Just(1e-7)]
}

fn network() -> impl Strategy<Value = RadialNetwork> {
    (2usize..=15).prop_flat_map(|n| {
        (
            prop::collection::vec(any::<prop::sample::Index>(), n),
            prop::collection::vec((finite(), finite(), prop_oneof![Just(f64::INFINITY), 0.5f64..100.0]), n),
            prop::collection::vec((finite(), any::<bool>()), n),
        )
            .prop_map(move |(parents, line_data, bus_data)| {
                let buses = (0..n)
                    .map(|i| {
                        let b = Bus::new(format!("b{i}"), bus_data[i].0);
                        if bus_data[i].1 { b.with_generator(format!("G{i}")) } else { b }
                    })
                    .collect();
                let lines = (1..n)
                    .map(|i| {
                        let (r, x, lim) = line_data[i];
                        Line::new(format!("b{}", parents[i].index(i)), format!("b{i}")).with_impedance(r, x).with_limit(lim)
                    })
                    .collect();
                RadialNetwork::new("b0", buses, lines)
            })
    })
}

fn fleet() -> impl Strategy<Value = Fleet> {
    prop::collection::vec((finite(), finite(), finite(), 0.0f64..10.0, 0.0f64..50.0), 1..8).prop_map(|gens| {
        Fleet::new(
            gens.into_iter()
                .enumerate()
                .map(|(i, (a, b, c, lo, span))| GeneratorParams::new(format!("b{i}"), a, b, c, lo, lo + span + 0.1))
                .collect(),
        )
        .unwrap()
    })
}

fn profile() -> impl Strategy<Value = LoadProfile> {
    (1usize..6, 1usize..20).prop_flat_map(|(buses, steps)| {
        prop::collection::vec(prop::collection::vec(finite(), steps), buses).prop_map(move |loads| {
            LoadProfile::new(
                (0..steps as u32).map(|t| t * 3).collect(),
                (0..buses).map(|b| format!("bus{b}").into()).collect(),
                loads,
            )
            .unwrap()
        })
    })
}

proptest! {
    #[test]
    fn network_round_trips(net in network()) {
        let text_lines = io::write_feeder(&net.lines);
        let text_buses = io::write_buses(&net.buses);
        let back = io::network_from_csv(&text_lines, &text_buses, None).unwrap();
        prop_assert_eq!(back, net);
    }

    #[test]
    fn fleet_round_trips(fleet in fleet()) {
        prop_assert_eq!(io::parse_fleet(&io::write_fleet(&fleet)).unwrap(), fleet);
    }

    #[test]
    fn profile_round_trips(p in profile()) {
        prop_assert_eq!(io::parse_profile(&io::write_profile(&p)).unwrap(), p);
    }

    #[test]
    fn graph_round_trips(n in 2usize..10, extra in prop::collection::vec((0usize..10, 0usize..10), 0..10)) {
        let mut edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        edges.extend(extra.into_iter().map(|(a, b)| (a % n, b % n)).filter(|(a, b)| a != b));
        let g = CommGraph::new(n, &edges).unwrap();
        prop_assert_eq!(io::parse_comm_graph(&io::write_comm_graph(&g), n).unwrap(), g);
    }
}

#[test]
fn bundled_files_round_trip() {
    let net = synthetic::feeder();
    let again = io::network_from_csv(&io::write_feeder(&net.lines), &io::write_buses(&net.buses), None).unwrap();
    assert_eq!(again, net);
    let day = synthetic::day_profile();
    assert_eq!(io::parse_profile(&io::write_profile(&day)).unwrap(), day);
}

#[test]
fn bundled_files_on_disk_match_embedded_copies() {
    let dir = synthetic::data_dir();
    let read = |f: &str| std::fs::read_to_string(dir.join(f)).unwrap();
    assert_eq!(read("feeder.csv"), synthetic::FEEDER_CSV);
    assert_eq!(read("buses.csv"), synthetic::BUSES_CSV);
    assert_eq!(read("generators.csv"), synthetic::GENERATORS_CSV);
}
