use crate::backend::TableLm;

pub(crate) fn toy() -> TableLm {
    TableLm::from_path(concat!(env!("CARGO_MANIFEST_DIR"), "/data/toy_table.json")).unwrap()
}

/// The 32-token variant of the toy table: same grammar, fewer landmarks.
pub(crate) fn toy32() -> TableLm {
    let mut t = toy().table().clone();
    let keep = ["eiffel", "louvre", "bigben", "colosseum", "paris", "london", "rome", "france", "england", "italy"];
    let drop: Vec<String> = t
        .entity_to_city
        .keys()
        .chain(t.city_to_country.keys())
        .filter(|w| !keep.contains(&w.as_str()))
        .cloned()
        .collect();
    t.entity_to_city.retain(|k, _| keep.contains(&k.as_str()));
    t.city_to_country.retain(|k, _| keep.contains(&k.as_str()));
    t.vocab.retain(|w| !drop.contains(w) && !["germany", "spain", "japan"].contains(&w.as_str()));
    for filler in ["f1", "f2", "f3", "f4", "f5", "f6", "f7", "f8", "f9"] {
        t.vocab.push(filler.into());
    }
    assert_eq!(t.vocab.len(), 32, "{:?}", t.vocab);
    TableLm::new(t).unwrap()
}
