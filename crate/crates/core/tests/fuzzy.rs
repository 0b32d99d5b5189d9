use histner::grounding::{find_near_matches, ground_all_with, levenshtein, max_dist_for, FuzzyMatch};
use histner::span::{CharText, EntitySpan, Label};
use histner::tagspan::parse_tagged;
use proptest::prelude::*;

fn lev(a: &[char], b: &[char]) -> usize {
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for i in 0..=a.len() {
        for j in 0..=b.len() {
            d[i][j] = if i == 0 {
                j
            } else if j == 0 {
                i
            } else {
                (d[i - 1][j] + 1)
                    .min(d[i][j - 1] + 1)
                    .min(d[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]))
            };
        }
    }
    d[a.len()][b.len()]
}

/// Every substring, scored, then accepted greedily by (distance, start, length gap, length).
fn oracle(pattern: &str, text: &str, k: usize) -> Vec<FuzzyMatch> {
    let p: Vec<char> = pattern.chars().collect();
    let t: Vec<char> = text.chars().collect();
    let mut cands = Vec::new();
    for i in 0..t.len() {
        for j in i + 1..=t.len() {
            let d = lev(&p, &t[i..j]);
            if d <= k {
                cands.push((d, i, (j - i).abs_diff(p.len()), j - i));
            }
        }
    }
    cands.sort();
    let mut chosen: Vec<FuzzyMatch> = Vec::new();
    for (dist, start, _, len) in cands {
        let end = start + len;
        if chosen.iter().all(|c| end <= c.start || c.end <= start) {
            chosen.push(FuzzyMatch { start, end, dist });
        }
    }
    chosen.sort_by_key(|c| c.start);
    chosen
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn matches_equal_oracle(pattern in "[abcd]{1,12}", text in "[abcd]{0,40}", k in 0usize..=3) {
        prop_assert_eq!(find_near_matches(&pattern, &text, k).unwrap(), oracle(&pattern, &text, k));
    }

    #[test]
    fn matches_are_disjoint_and_within_bound(pattern in "[a-eä ]{1,10}", text in "[a-eä ]{0,60}", k in 0usize..=4) {
        let found = find_near_matches(&pattern, &text, k).unwrap();
        let t: Vec<char> = text.chars().collect();
        let p: Vec<char> = pattern.chars().collect();
        for w in found.windows(2) {
            prop_assert!(w[0].end <= w[1].start);
        }
        for m in &found {
            prop_assert!(m.dist <= k);
            prop_assert_eq!(lev(&p, &t[m.start..m.end]), m.dist);
        }
    }

    #[test]
    fn levenshtein_is_a_metric(a in "[ab]{0,10}", b in "[ab]{0,10}", c in "[ab]{0,10}") {
        prop_assert_eq!(levenshtein(&a, &b), levenshtein(&b, &a));
        prop_assert_eq!(levenshtein(&a, &a), 0);
        prop_assert!(levenshtein(&a, &c) <= levenshtein(&a, &b) + levenshtein(&b, &c));
    }

    #[test]
    fn grounded_spans_respect_the_bound(
        source in "[a-f ]{1,80}",
        output in "[a-f ]{0,30}(<<PER [a-f]{1,12} /PER>>[a-f ]{0,20}){1,4}",
        slack in 0usize..60,
    ) {
        let parsed = parse_tagged(&output);
        let outcome = ground_all_with(&parsed, &source, slack);
        prop_assert_eq!(outcome.grounded.len() + outcome.failures.len(), parsed.spans.len());
        let src = CharText::new(&source);
        let plain = CharText::new(&parsed.plain_text);
        for g in &outcome.grounded {
            let wanted = plain.slice(parsed.spans.iter().find(|s| s.start == g.origin).unwrap().start,
                parsed.spans.iter().find(|s| s.start == g.origin).unwrap().end);
            prop_assert!(g.span.end <= src.len());
            prop_assert!(g.dist <= max_dist_for(&wanted));
            prop_assert_eq!(levenshtein(&wanted, &src.slice(g.span.start, g.span.end)), g.dist);
        }
    }
}

#[test]
fn max_dist_law() {
    for len in 1..=100 {
        assert_eq!(max_dist_for(&"x".repeat(len)), len / 5);
        assert_eq!(max_dist_for(&"ß".repeat(len)), len / 5);
    }
}

#[test]
fn exact_output_grounds_to_gold_in_prose() {
    let source = "Am Morgen fuhr Goethe von Weimar nach Jena, wo Schiller ihn in Jena erwartete.";
    let output = "Am Morgen fuhr <<PER Goethe /PER>> von <<LOC Weimar /LOC>> nach <<LOC Jena /LOC>>, wo <<PER Schiller /PER>> ihn in <<LOC Jena /LOC>> erwartete.";
    let outcome = ground_all_with(&parse_tagged(output), source, 50);
    let spans: Vec<EntitySpan> = outcome.spans();
    let text = CharText::new(source);
    let got: Vec<(String, Label)> = spans.iter().map(|s| (text.slice(s.start, s.end), s.label)).collect();
    assert_eq!(got.len(), 5);
    assert_eq!(spans[2], EntitySpan::new(38, 42, Label::Loc));
    assert_eq!(spans[4], EntitySpan::new(63, 67, Label::Loc));
    assert!(got.iter().all(|(t, _)| ["Goethe", "Weimar", "Jena", "Schiller"].contains(&t.as_str())));
}
