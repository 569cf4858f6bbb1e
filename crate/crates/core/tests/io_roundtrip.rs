mod common;

use common::*;
use pico_core::io::{self, ClusterFile, PieceChainFile, PlanFile, ReportFile};
use pico_core::partition::{partition, PieceChain};
use pico_core::planner::plan;
use pico_core::simulator::{simulate, SimConfig};
use pico_core::Error;

fn chain_for(name: &str) -> PieceChain {
    let g = load_model(name);
    let r = partition(&g, 5).unwrap();
    PieceChain::from_partition(g, 5, r).unwrap()
}

#[test]
fn model_file_round_trips() {
    for name in [
        "vgg16.json",
        "resnet_block.json",
        "inception_c.json",
        "fig8.json",
    ] {
        let g = load_model(name);
        let text = io::to_json(&g.to_file());
        let again = pico_core::graph::parse_model(text.as_bytes()).unwrap();
        assert_eq!(io::to_json(&again.to_file()), text);
        assert_eq!(again.len(), g.len());
        assert_eq!(again.edge_count(), g.edge_count());
    }
}

#[test]
fn piece_chain_round_trips() {
    for name in ["yolov2.json", "resnet_block.json", "inception_c.json"] {
        let chain = chain_for(name);
        let text = io::to_json(&PieceChainFile::from_chain(&chain));
        let again = io::parse_piece_chain(text.as_bytes()).unwrap();
        assert_eq!(again.pieces, chain.pieces);
        assert_eq!(io::to_json(&PieceChainFile::from_chain(&again)), text);
    }
}

#[test]
fn plan_and_report_round_trip() {
    let chain = chain_for("vgg16.json");
    let c = io::parse_cluster(&std::fs::read(fixture("cluster_hetero.json")).unwrap()).unwrap();
    let p = plan(&chain, &c, "cluster_hetero", 30.0).unwrap();
    let text = io::to_json(&PlanFile::with_chain(&p, &chain));
    let (again, chain2) = io::parse_plan_with_chain(text.as_bytes(), &c).unwrap();
    assert_eq!(again.ranges(), p.ranges());
    assert_eq!(again.t_lim_s, 30.0);
    assert_eq!(io::to_json(&PlanFile::with_chain(&again, &chain2)), text);

    let r = simulate(&again, &chain2, &c, &SimConfig::default()).unwrap();
    let file = ReportFile::from_report(&again.model, &r);
    let text = io::to_json(&file);
    assert_eq!(io::parse_report(text.as_bytes()).unwrap(), file);
}

#[test]
fn cluster_round_trips() {
    let text = std::fs::read_to_string(fixture("cluster_hetero.json")).unwrap();
    let c = io::parse_cluster(text.as_bytes()).unwrap();
    assert_eq!(c.devices.len(), 8);
    let again = io::to_json(&ClusterFile::from_cluster(&c));
    assert_eq!(io::parse_cluster(again.as_bytes()).unwrap(), c);
}

#[test]
fn floats_keep_nine_significant_digits() {
    assert_eq!(io::round9(1.0 / 3.0), 0.333333333);
    assert_eq!(io::round9(123456789.123), 123456789.0);
    assert_eq!(io::round9(0.0), 0.0);
}

#[test]
fn bad_files_are_rejected() {
    assert!(matches!(
        pico_core::graph::parse_model(br#"{"name": "x", "input": {"channels": 1, "height": 4, "width": 4}, "layers": [], "edges": []}"#),
        Err(Error::EmptyModel)
    ));
    assert!(matches!(
        io::parse_cluster(b"{\"bandwidth_mbps\": 1,"),
        Err(Error::Syntax { .. })
    ));
    let chain = chain_for("fig8.json");
    let c = io::parse_cluster(&std::fs::read(fixture("cluster_uniform4.json")).unwrap()).unwrap();
    let p = plan(&chain, &c, "u", f64::INFINITY).unwrap();
    let mut file = PlanFile::from_plan(&p);
    file.stages[0].strips[0].row_end += 1;
    let text = io::to_json(&file);
    assert!(io::parse_plan(text.as_bytes(), &chain, &c).is_err());
}
