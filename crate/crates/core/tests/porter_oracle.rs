//! Stems checked against a frozen table from an independent Porter
//! implementation (NLTK, original-algorithm mode).

use signspot::text::{porter_stem, PorterStemmer, Stemmer};

const TABLE: &str = include_str!("data/porter_oracle.tsv");

#[test]
fn stems_match_reference_table() {
    let mut mismatches = Vec::new();
    let mut n = 0;
    for line in TABLE.lines() {
        let (word, expected) = line.split_once('\t').expect("two columns");
        n += 1;
        let got = porter_stem(word);
        if got != expected {
            mismatches.push(format!("{word}: got {got}, expected {expected}"));
        }
    }
    assert!(n > 2000);
    assert!(mismatches.is_empty(), "{} mismatches:\n{}", mismatches.len(), mismatches.join("\n"));
}

#[test]
fn named_examples() {
    let s = PorterStemmer;
    assert_eq!(s.stem("armies"), "armi");
    assert_eq!(s.stem("talk"), "talk");
    assert_eq!(s.stem("competition"), "competit");
}
