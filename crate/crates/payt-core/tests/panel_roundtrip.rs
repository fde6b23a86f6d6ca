//! Panel serialization properties: full-precision CSV round trips and
//! generator-manifest reconciliation.

use payt_core::dgp::{self, DgpSpec};
use payt_core::panel::{self, LoadOptions, PanelRecord, SchemaMap};
use proptest::prelude::*;

fn arb_record(unit: u32, year: i32) -> impl Strategy<Value = PanelRecord> {
    (
        0.0..500.0f64,
        0.0..500.0f64,
        proptest::option::of(0.001..2.0f64),
        proptest::option::of(0.001..2.0f64),
        proptest::collection::vec(-1e6..1e6f64, 3),
    )
        .prop_map(move |(uw, rw, pc_uw, pc_rw, covariates)| PanelRecord {
            unit,
            year,
            price: 0.0,
            uw,
            rw,
            tw: uw + rw,
            covariates,
            adoption_year: None,
            pc_uw,
            pc_rw,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn csv_round_trip_is_lossless(records in proptest::collection::vec(arb_record(0, 2010), 1..20)) {
        let records: Vec<PanelRecord> = records
            .into_iter()
            .enumerate()
            .map(|(i, mut r)| {
                r.unit = i as u32;
                r
            })
            .collect();
        let unit_ids = (0..records.len()).map(|i| format!("u{i}")).collect();
        let names = vec!["x1".into(), "x2".into(), "x3".into()];
        let original =
            panel::Panel::from_records(unit_ids, records, names, LoadOptions::default()).unwrap();
        let schema = SchemaMap::synthetic(3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("panel.csv");
        panel::write_panel_csv(&original, &schema, &path).unwrap();
        let loaded = panel::load_panel(&path, &schema, LoadOptions::default()).unwrap();
        prop_assert_eq!(original.records.len(), loaded.records.len());
        for (a, b) in original.records.iter().zip(&loaded.records) {
            // bitwise equality via the shortest round-trip float encoding
            prop_assert_eq!(a.uw.to_bits(), b.uw.to_bits());
            prop_assert_eq!(a.rw.to_bits(), b.rw.to_bits());
            prop_assert_eq!(a.tw.to_bits(), b.tw.to_bits());
            prop_assert_eq!(a.pc_uw.map(f64::to_bits), b.pc_uw.map(f64::to_bits));
            for (ca, cb) in a.covariates.iter().zip(&b.covariates) {
                prop_assert_eq!(ca.to_bits(), cb.to_bits());
            }
        }
    }
}

#[test]
fn generated_csv_loads_with_manifest_counts() {
    let spec = DgpSpec::staggered_default(3242, 3);
    let generated = dgp::generate(&spec).unwrap();
    let schema = SchemaMap::synthetic(spec.d);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("panel.csv");
    panel::write_panel_csv(&generated.panel, &schema, &path).unwrap();
    let loaded = panel::load_panel(&path, &schema, LoadOptions::default()).unwrap();
    assert_eq!(loaded.records.len(), generated.manifest.len());
    assert_eq!(loaded.records.len(), 3242 * 6);
    let treated_loaded = loaded
        .records
        .iter()
        .filter(|r| r.adoption_year.is_some())
        .map(|r| r.unit)
        .collect::<std::collections::BTreeSet<_>>()
        .len();
    let treated_manifest = generated
        .manifest
        .iter()
        .filter(|m| m.treated)
        .map(|m| m.unit_id.clone())
        .collect::<std::collections::BTreeSet<_>>()
        .len();
    assert_eq!(treated_loaded, treated_manifest);
    assert_eq!(treated_loaded, 194);
}
