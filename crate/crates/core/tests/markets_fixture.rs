//! CSV ingestion on a fixture built to mimic the margins of the retail entry data:
//! 1997 markets with SPC of at least 7.25, Walmart present in 982 and Kmart in 393
//! of them (shares 0.4917 and 0.1968), plus smaller markets that the filter drops.

use std::fmt::Write;

use pse::harness::load_markets_csv;

const KEPT: usize = 1997;
const DROPPED: usize = 140;
const WALMART: usize = 982;
const KMART: usize = 393;

fn fixture() -> String {
    let mut text = String::from("spc,Walmart,kmart\n");
    for i in 0..KEPT + DROPPED {
        let (spc, w, k) = if i < KEPT {
            (7.25 + 3.41 * i as f64 / (KEPT - 1) as f64, (i * 7) % KEPT < WALMART, (i * 11) % KEPT < KMART)
        } else {
            (5.0 + 2.2 * (i - KEPT) as f64 / DROPPED as f64, i % 2 == 0, i % 3 == 0)
        };
        writeln!(text, "{spc},{},{}", u8::from(w), u8::from(k)).unwrap();
    }
    text
}

#[test]
fn table_margins_survive_the_filter() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("markets.csv");
    std::fs::write(&path, fixture()).unwrap();

    let all = load_markets_csv(&path, None).unwrap();
    assert_eq!(all.len(), KEPT + DROPPED);

    let data = load_markets_csv(&path, Some(7.25)).unwrap();
    assert_eq!(data.len(), KEPT);
    let (p_w, p_k) = data.entry_rates();
    assert_eq!(p_w, WALMART as f64 / KEPT as f64);
    assert_eq!(p_k, KMART as f64 / KEPT as f64);
    assert!((p_w - 0.4917).abs() < 5e-5);
    assert!((p_k - 0.1968).abs() < 5e-5);
    let (lo, hi) = data.x_range();
    assert!(lo >= 7.25 && hi <= 10.66 + 1e-12);
}
