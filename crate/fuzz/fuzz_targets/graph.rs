#![no_main]

use libfuzzer_sys::fuzz_target;
use smellscape::cograph::parse_graph;

fuzz_target!(|data: &[u8]| {
    // Node CSV and edge CSV separated by a NUL byte.
    let mut parts = data.splitn(2, |&b| b == 0);
    let nodes = parts.next().unwrap_or_default();
    let edges = parts.next().unwrap_or_default();
    let _ = parse_graph(nodes, edges);
});
