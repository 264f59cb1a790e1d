//! The JSON fixtures shipped in `fixtures/` are the serialized synthetic
//! networks. Set `LEAKHUNT_BLESS=1` to rewrite them after changing a
//! generator.

use std::path::PathBuf;

use leakhunt::network::Network;
use leakhunt::synthetic;

fn check(name: &str, net: Network) {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(format!("{name}.json"));
    let json = net.to_json();
    if std::env::var_os("LEAKHUNT_BLESS").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, &json).unwrap();
    }
    let on_disk = Network::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert_eq!(on_disk.fingerprint(), net.fingerprint(), "{name}.json is stale");
}

#[test]
fn shipped_fixtures_match_the_generators() {
    check("single_pipe", synthetic::single_pipe(50.0, 0.0));
    check("triangle", synthetic::triangle());
    check("three_dma", synthetic::three_dma());
    check("five_dma_200", synthetic::five_dma_200());
    check("nine_dma", synthetic::nine_dma());
    check("town_853", synthetic::town_853());
}
