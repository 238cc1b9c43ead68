//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use disco_core::analysis::{ProbMode, TokenClass};
use disco_core::backend::{greedy_decode, FactTable, TableLm, Tokenizer};
use disco_core::decode::{disco_decode, disco_step, Constraints, DecodeParams, ModelPair, PartialSets, TokenSets};
use disco_core::edit_context::{build_edited_prompt, EditCase};
use disco_core::harness::{load_dataset, run, EvalReport, Mode, RunConfig};
use disco_core::metrics::{exact_match, outdated_error, target_error, token_f1, Property};
use disco_core::probdist::{jsd, kl_divergence, ProbDist};
use disco_core::vocab::{TokenId, VocabId};

const TABLE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/data/toy_table.json");
const TOY20: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/data/toy20.json");

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);
type ToyRuns = (TableLm, Vec<EditCase>, BTreeMap<Mode, EvalReport>);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_pair(rng: &mut ChaCha8Rng, vid: VocabId, n: usize) -> (ProbDist, ProbDist) {
    let mut draw = || {
        let mut raw: Vec<f64> = (0..n).map(|_| rng.gen::<f64>().powi(3)).collect();
        raw[rng.gen_range(0..n)] += 0.1;
        ProbDist::normalize(raw, vid).unwrap()
    };
    (draw(), draw())
}

fn random_sets(rng: &mut ChaCha8Rng, n: usize) -> TokenSets {
    let mut pick = |k: usize| (0..k).map(|_| rng.gen_range(0..n) as TokenId).collect::<Vec<_>>();
    let out = pick(1 + n / 4);
    let edit = pick(1 + n / 6);
    TokenSets::new(&out, &edit, &[])
}

fn constraint_invariant() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let vid = VocabId::of_tokens(&["acceptance"]);
    let start = Instant::now();
    let mut violations = 0usize;
    for _ in 0..10_000 {
        let n = rng.gen_range(2..64);
        let (pe, po) = random_pair(&mut rng, vid, n);
        let sets = random_sets(&mut rng, n);
        let alpha = rng.gen_range(0.0..3.0);
        let (_, delta) = disco_step(&pe, &po, &sets, alpha, Constraints::BOTH).map_err(|e| e.to_string())?;
        violations += sets.v_out.union(&sets.v_edit).filter(|&&v| delta[v as usize] > 0.0).count();
    }
    let elapsed = start.elapsed().as_secs_f64();
    ensure(violations == 0, || format!("{violations} violations"))?;
    ensure(elapsed < 5.0, || format!("took {elapsed:.2} s"))?;
    Ok(format!("10000 calls, 0 violations, {elapsed:.3} s"))
}

fn alpha_monotonicity() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let vid = VocabId::of_tokens(&["acceptance"]);
    let grid: Vec<f64> = (0..=20).map(|i| i as f64 / 10.0).collect();
    let mut checked = 0usize;
    for trial in 0..1000 {
        let n = rng.gen_range(2..40);
        let (pe, po) = random_pair(&mut rng, vid, n);
        let sets = random_sets(&mut rng, n);
        let scores: Vec<Vec<f64>> = grid
            .iter()
            .map(|&a| disco_step(&pe, &po, &sets, a, Constraints::BOTH).map(|(s, _)| s.scores().to_vec()))
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        for &v in sets.v_out.union(&sets.v_edit) {
            for w in scores.windows(2) {
                let (a, b) = (w[0][v as usize], w[1][v as usize]);
                ensure(b <= a + 1e-12, || format!("trial {trial}, token {v}: {a} -> {b}"))?;
                checked += 1;
            }
        }
    }
    Ok(format!("1000 triples, {checked} adjacent alpha pairs non-increasing"))
}

fn random_table(rng: &mut ChaCha8Rng, base: &FactTable) -> FactTable {
    let mut t = base.clone();
    t.lambda_direct = rng.gen_range(0.0..1.0);
    t.lambda_hop = rng.gen_range(0.0..=t.lambda_direct);
    t.floor = rng.gen_range(1e-4..1.0 / (2.0 * t.vocab.len() as f64));
    t
}

fn alpha_zero_equivalence() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let base = FactTable::from_path(TABLE).map_err(|e| e.to_string())?;
    let entities: Vec<String> = base.entity_to_city.keys().cloned().collect();
    let cities: Vec<String> = base.city_to_country.keys().cloned().collect();
    for i in 0..100 {
        let lm = TableLm::new(random_table(&mut rng, &base)).map_err(|e| e.to_string())?;
        let e = &entities[rng.gen_range(0..entities.len())];
        let target = &cities[rng.gen_range(0..cities.len())];
        let x = match rng.gen_range(0..3) {
            0 => format!("q : where is {e} ? a :"),
            1 => format!("q : which country is {e} in ? a :"),
            _ => format!("{e} is in"),
        };
        let demo = EditCase {
            case_id: "demo".into(),
            edit_prompt: format!("{} is in", entities[rng.gen_range(0..entities.len())]),
            edit_target: cities[rng.gen_range(0..cities.len())].clone(),
            ..EditCase::default()
        };
        let case = EditCase {
            case_id: format!("r{i}"),
            edit_prompt: format!("{e} is in"),
            edit_target: target.clone(),
            rephrase_prompt: format!("q : where is {e} ? a :"),
            ..EditCase::default()
        };
        let demos: Vec<&EditCase> = if rng.gen_bool(0.5) { vec![&demo] } else { vec![] };
        let edited = build_edited_prompt(&case, &demos, &x, rng.gen_bool(0.5)).unwrap().tokenize(&lm).map_err(|e| e.to_string())?;
        let raw = lm.tokenize(&x).map_err(|e| e.to_string())?;
        let partial = PartialSets { v_edit: lm.tokenize(target).unwrap().ids().to_vec(), v_golden: vec![] };
        let constraints = Constraints::ABLATION_GRID[rng.gen_range(0..4)].1;
        let params = DecodeParams { alpha: 0.0, max_new: rng.gen_range(1..5), constraints };
        let trace = disco_decode(ModelPair::shared(&lm), &raw, &edited, &partial, params).map_err(|e| e.to_string())?;
        let plain = greedy_decode(&lm, &edited.context(), params.max_new).map_err(|e| e.to_string())?;
        ensure(trace.answer == plain, || format!("case {i} ({x}): {:?} vs {:?}", trace.answer.ids(), plain.ids()))?;
    }
    Ok("100 randomized fact-table cases token-exact".into())
}

/// Word-level reimplementation of the fact-table model and of the three
/// decoding modes, used as the expected-value oracle for the toy suite.
mod brute {
    use std::collections::{BTreeSet, HashMap};

    pub struct Table {
        pub vocab: Vec<String>,
        city: HashMap<String, String>,
        pub country: HashMap<String, String>,
        lambda_direct: f64,
        lambda_hop: f64,
        floor: f64,
    }

    impl Table {
        pub fn load(path: &str) -> Table {
            let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
            let map = |k: &str| -> HashMap<String, String> {
                v[k].as_object().unwrap().iter().map(|(a, b)| (a.clone(), b.as_str().unwrap().to_string())).collect()
            };
            Table {
                vocab: v["vocab"].as_array().unwrap().iter().map(|w| w.as_str().unwrap().to_string()).collect(),
                city: map("entity_to_city"),
                country: map("city_to_country"),
                lambda_direct: v["lambda_direct"].as_f64().unwrap(),
                lambda_hop: v["lambda_hop"].as_f64().unwrap(),
                floor: v["floor"].as_f64().unwrap(),
            }
        }

        pub fn city_of(&self, e: &str) -> &str {
            &self.city[e]
        }

        fn rule(&self, words: &[String]) -> Vec<(String, f64)> {
            let eos = vec![("eos".to_string(), 1.0)];
            let mut overrides: HashMap<String, String> = HashMap::new();
            let mut i = 0;
            while words.len() >= i + 3 && words[i] == "new" && words[i + 1] == "fact" && words[i + 2] == ":" {
                let Some(end) = words[i + 3..].iter().position(|w| w == ".") else { return eos };
                let body = &words[i + 3..i + 3 + end];
                if body.len() == 4 && body[1] == "is" && body[2] == "in" && self.city.contains_key(&body[0]) {
                    overrides.insert(body[0].clone(), body[3].clone());
                }
                i += 3 + end + 1;
            }
            let r: Vec<&str> = words[i..].iter().map(String::as_str).collect();
            let (hop, entity, tail) = match r.as_slice() {
                ["q", ":", "where", "is", e, "?", "a", ":", tail @ ..] => (false, *e, tail.len()),
                ["q", ":", "which", "country", "is", e, "in", "?", "a", ":", tail @ ..] => (true, *e, tail.len()),
                [e, "is", "in", tail @ ..] => (false, *e, tail.len()),
                _ => return eos,
            };
            if tail > 0 {
                return eos;
            }
            let old_city = self.city[entity].clone();
            match (hop, overrides.get(entity)) {
                (false, None) => vec![(old_city, 1.0)],
                (false, Some(c)) => vec![(c.clone(), self.lambda_direct), (old_city, 1.0 - self.lambda_direct)],
                (true, None) => vec![(self.country[&old_city].clone(), 1.0)],
                (true, Some(c)) => vec![
                    (self.country[c].clone(), self.lambda_hop),
                    (self.country[&old_city].clone(), 1.0 - self.lambda_hop),
                ],
            }
        }

        pub fn dist(&self, words: &[String]) -> Vec<f64> {
            let n = self.vocab.len();
            let weight = 1.0 - self.floor * n as f64;
            let mut mass = vec![0.0; n];
            for (w, m) in self.rule(words) {
                let i = self.vocab.iter().position(|v| *v == w).unwrap();
                mass[i] += m;
            }
            mass.into_iter().map(|m| self.floor + weight * m).collect()
        }

        fn argmax(v: &[f64]) -> usize {
            let mut best = 0;
            for i in 1..v.len() {
                if v[i] > v[best] {
                    best = i;
                }
            }
            best
        }

        fn extend(ctx: &[String], ans: &[String]) -> Vec<String> {
            ctx.iter().chain(ans).cloned().collect()
        }

        /// Greedy answer and its per-step distributions, eos step included.
        pub fn greedy(&self, ctx: &[String], max_new: usize) -> (Vec<String>, Vec<Vec<f64>>) {
            let mut ans = Vec::new();
            let mut dists = Vec::new();
            for _ in 0..max_new {
                let d = self.dist(&Self::extend(ctx, &ans));
                let w = &self.vocab[Self::argmax(&d)];
                dists.push(d);
                if w == "eos" {
                    break;
                }
                ans.push(w.clone());
            }
            (ans, dists)
        }

        pub fn disco(
            &self,
            edited: &[String],
            orig: &[Vec<f64>],
            constrained: &BTreeSet<String>,
            alpha: f64,
            max_new: usize,
        ) -> Vec<String> {
            let mut ans = Vec::new();
            for t in 0..max_new {
                let pe = self.dist(&Self::extend(edited, &ans));
                let score: Vec<f64> = (0..pe.len())
                    .map(|i| {
                        let mut d = orig.get(t).map_or(0.0, |po| pe[i] - po[i]);
                        if constrained.contains(&self.vocab[i]) && d > 0.0 {
                            d = 0.0;
                        }
                        pe[i] + alpha * d
                    })
                    .collect();
                let w = &self.vocab[Self::argmax(&score)];
                if w == "eos" {
                    break;
                }
                ans.push(w.clone());
            }
            ans
        }
    }
}

/// Reference metrics: brute-force counting on independently normalized text.
mod reference {
    use std::collections::BTreeSet;

    pub fn norm(s: &str) -> Vec<String> {
        let mut words = Vec::new();
        let mut cur = String::new();
        for c in s.chars() {
            if c.is_whitespace() {
                if !cur.is_empty() {
                    words.push(std::mem::take(&mut cur));
                }
            } else if !c.is_ascii_punctuation() {
                cur.extend(c.to_lowercase());
            }
        }
        if !cur.is_empty() {
            words.push(cur);
        }
        words.retain(|w| w != "a" && w != "an" && w != "the");
        words
    }

    pub fn f1(pred: &str, gold: &str) -> f64 {
        let p = norm(pred);
        let g = norm(gold);
        if p.is_empty() || g.is_empty() {
            return if p.is_empty() && g.is_empty() { 1.0 } else { 0.0 };
        }
        let unique: BTreeSet<&String> = p.iter().collect();
        let common: usize = unique
            .into_iter()
            .map(|w| p.iter().filter(|x| *x == w).count().min(g.iter().filter(|x| *x == w).count()))
            .sum();
        if common == 0 {
            return 0.0;
        }
        let precision = common as f64 / p.len() as f64;
        let recall = common as f64 / g.len() as f64;
        2.0 * precision * recall / (precision + recall)
    }

    pub fn em(pred: &str, gold: &str) -> f64 {
        f64::from(u8::from(norm(pred) == norm(gold)))
    }

    /// Share of `pred` positions whose token is in `set` and absent from `golden`.
    pub fn rate<T: PartialEq>(pred: &[T], set: &[T], golden: &[T]) -> f64 {
        if pred.is_empty() {
            return 0.0;
        }
        let mut hits = 0;
        for t in pred {
            if set.contains(t) && !golden.contains(t) {
                hits += 1;
            }
        }
        hits as f64 / pred.len() as f64
    }
}

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

#[derive(Default)]
struct Expected {
    f1: BTreeMap<Property, Vec<f64>>,
    em: BTreeMap<Property, Vec<f64>>,
    oe: Vec<f64>,
    te: Vec<f64>,
}

impl Expected {
    fn mean(v: &[f64]) -> f64 {
        100.0 * v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Expected aggregates per mode, and the (plain, disco) portability answers per case.
fn enumerate(table: &brute::Table, cases: &[EditCase]) -> (BTreeMap<Mode, Expected>, Vec<(String, String)>) {
    let mut out: BTreeMap<Mode, Expected> = BTreeMap::new();
    let mut portability = Vec::new();
    for case in cases {
        let prefix = [
            format!("new fact : {} {} .", case.rephrase_prompt, case.edit_target),
            format!("new fact : {} {} .", case.edit_prompt, case.edit_target),
        ];
        for property in Property::ALL {
            let prompt = property.prompt(case);
            let (orig, orig_dists) = table.greedy(&words(prompt), 16);
            let edited: Vec<String> = prefix.iter().flat_map(|l| words(l)).chain(words(prompt)).collect();
            let (plain, _) = table.greedy(&edited, 16);
            let v_edit = words(&case.edit_target);
            let constrained: BTreeSet<String> = orig.iter().chain(&v_edit).cloned().collect();
            let disco = table.disco(&edited, &orig_dists, &constrained, 1.0, 16);
            let golden = match property {
                Property::Reliability | Property::Generality => case.edit_target.clone(),
                Property::Locality => orig.join(" "),
                Property::Portability => case.portability_golden.clone(),
            };
            if property == Property::Portability {
                portability.push((plain.join(" "), disco.join(" ")));
            }
            for (mode, ans) in [(Mode::Raw, &orig), (Mode::EditedPlain, &plain), (Mode::Disco, &disco)] {
                let e = out.entry(mode).or_default();
                let text = ans.join(" ");
                e.f1.entry(property).or_default().push(reference::f1(&text, &golden));
                e.em.entry(property).or_default().push(reference::em(&text, &golden));
                if property == Property::Portability {
                    let g = words(&golden);
                    e.oe.push(reference::rate(ans, &orig, &g));
                    e.te.push(reference::rate(ans, &v_edit, &g));
                }
            }
        }
    }
    (out, portability)
}

fn toy_runs(analysis: bool) -> Result<ToyRuns, String> {
    let lm = TableLm::from_path(TABLE).map_err(|e| e.to_string())?;
    let cases = load_dataset(TOY20).map_err(|e| e.to_string())?;
    let mut reports = BTreeMap::new();
    for mode in [Mode::Raw, Mode::EditedPlain, Mode::Disco] {
        let config = RunConfig {
            dataset_path: TOY20.into(),
            table_path: Some(TABLE.into()),
            mode,
            analysis,
            ..RunConfig::default()
        };
        let report = run(&config, ModelPair::shared(&lm), &cases, None).map_err(|e| e.to_string())?;
        reports.insert(mode, report);
    }
    Ok((lm, cases, reports))
}

fn toy_flip() -> Check {
    let table = brute::Table::load(TABLE);
    let (_, cases, reports) = toy_runs(false)?;
    let (expected, portability) = enumerate(&table, &cases);
    let mut compared = 0;
    for (mode, exp) in &expected {
        let report = &reports[mode];
        for property in Property::ALL {
            let agg = report.aggregate_for(property).ok_or("missing aggregate")?;
            let (f1, em) = (Expected::mean(&exp.f1[&property]), Expected::mean(&exp.em[&property]));
            ensure(agg.f1 == f1 && agg.em == em, || {
                format!("{mode:?} {property}: F1/EM {}/{} vs expected {f1}/{em}", agg.f1, agg.em)
            })?;
            compared += 2;
        }
        let agg = report.aggregate_for(Property::Portability).unwrap();
        let (oe, te) = (Expected::mean(&exp.oe), Expected::mean(&exp.te));
        ensure(agg.oe == Some(oe) && agg.te == Some(te), || {
            format!("{mode:?} portability OE/TE {:?}/{:?} vs expected {oe}/{te}", agg.oe, agg.te)
        })?;
        compared += 2;
    }

    let mut flips = 0;
    for (case, (plain, disco)) in cases.iter().zip(&portability) {
        let old = &table.country[table.city_of(case.edit_prompt.split_whitespace().next().unwrap())];
        let new = &table.country[&case.edit_target];
        if old == new {
            continue;
        }
        let result = reports[&Mode::Disco].cases.iter().find(|c| c.case_id == case.case_id).unwrap();
        let plain_run = reports[&Mode::EditedPlain].cases.iter().find(|c| c.case_id == case.case_id).unwrap();
        let got_disco = &result.probe(Property::Portability).unwrap().answer;
        let got_plain = &plain_run.probe(Property::Portability).unwrap().answer;
        ensure(plain == old && got_plain == old, || format!("{}: edited_plain answered {got_plain}", case.case_id))?;
        ensure(disco == new && got_disco == new, || format!("{}: disco answered {got_disco}", case.case_id))?;
        flips += 1;
    }
    ensure(flips >= 15, || format!("only {flips} flip-constructed cases"))?;
    let d = reports[&Mode::Disco].aggregate_for(Property::Portability).unwrap();
    let p = reports[&Mode::EditedPlain].aggregate_for(Property::Portability).unwrap();
    Ok(format!(
        "{flips}/{flips} flips; {compared} aggregates equal the enumerator; portability F1 {:.2} -> {:.2}, OE {:.2} -> {:.2}",
        p.f1,
        d.f1,
        p.oe.unwrap(),
        d.oe.unwrap()
    ))
}

fn metric_oracles() -> Check {
    ensure(token_f1("the city of london", "london england") == 0.4, || "F1 hand example".into())?;
    ensure(reference::f1("the city of london", "london england") == 0.4, || "reference F1 hand example".into())?;
    // france=0 is=1 the=2 country=3, golden england=5
    let sets = TokenSets::new(&[0], &[6], &[5]);
    ensure(outdated_error(&[0, 1, 2, 3], &sets) == 0.25, || "OE hand example".into())?;

    let pool = ["The", "the", "a", "An", "london", "London.", "england", "paris,", "city", "of", "x", "!", "new-york", "ÉCOLE"];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let phrase = |rng: &mut ChaCha8Rng| {
        let n = rng.gen_range(0..6);
        (0..n).map(|_| pool[rng.gen_range(0..pool.len())]).collect::<Vec<_>>().join(" ")
    };
    let n = 2000;
    for i in 0..n {
        let (p, g) = (phrase(&mut rng), phrase(&mut rng));
        ensure(token_f1(&p, &g) == reference::f1(&p, &g), || format!("F1 instance {i}: {p:?} vs {g:?}"))?;
        ensure(exact_match(&p, &g) == reference::em(&p, &g), || format!("EM instance {i}: {p:?} vs {g:?}"))?;
        let mut ids = |k: usize| (0..rng.gen_range(0..k)).map(|_| rng.gen_range(0..8u32)).collect::<Vec<TokenId>>();
        let (pred, out, edit, gold) = (ids(7), ids(4), ids(3), ids(3));
        let sets = TokenSets::new(&out, &edit, &gold);
        ensure(outdated_error(&pred, &sets) == reference::rate(&pred, &out, &gold), || format!("OE instance {i}"))?;
        ensure(target_error(&pred, &sets) == reference::rate(&pred, &edit, &gold), || format!("TE instance {i}"))?;
    }
    Ok(format!("{n} random instances exactly equal; hand examples F1 = 0.4, OE = 0.25"))
}

fn divergence_suite() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let vid = VocabId::of_tokens(&["acceptance"]);
    let mut worst_self = 0.0f64;
    let mut worst_sym = 0.0f64;
    for _ in 0..100 {
        let n = rng.gen_range(2..50);
        let (p, q) = random_pair(&mut rng, vid, n);
        worst_self = worst_self.max(jsd(&p, &p, 1e-6).unwrap()).max(jsd(&q, &q, 1e-6).unwrap());
        worst_sym = worst_sym.max((jsd(&p, &q, 1e-6).unwrap() - jsd(&q, &p, 1e-6).unwrap()).abs());
    }
    let p = ProbDist::from_probs(vec![1.0, 0.0], vid).unwrap();
    let q = ProbDist::from_probs(vec![0.5, 0.5], vid).unwrap();
    let kl = kl_divergence(&p, &q, 1e-6).unwrap();
    ensure(worst_self <= 1e-12, || format!("jsd(p, p) up to {worst_self:e}"))?;
    ensure(worst_sym <= 1e-12, || format!("asymmetry up to {worst_sym:e}"))?;
    ensure((kl - std::f64::consts::LN_2).abs() <= 1e-4, || format!("two-point KL {kl}"))?;
    Ok(format!("max jsd(p,p) {worst_self:.1e}, max asymmetry {worst_sym:.1e}, KL([1,0]||[.5,.5]) = {kl:.6}"))
}

fn directional_analyses() -> Check {
    let (_, _, reports) = toy_runs(true)?;
    let plain = &reports[&Mode::EditedPlain];
    let disco = &reports[&Mode::Disco];
    let jsd_of = |p: Property| plain.aggregate_for(p).and_then(|a| a.jsd).ok_or("missing jsd");
    let (port, rel) = (jsd_of(Property::Portability)?, jsd_of(Property::Reliability)?);
    ensure(port < rel, || format!("JSD portability {port} >= reliability {rel}"))?;

    let analysis = disco.analysis.as_ref().ok_or("missing analysis")?;
    let outdated = |mode: ProbMode| {
        analysis
            .golden_prob
            .iter()
            .find(|r| r.property == Property::Portability && r.mode == mode)
            .and_then(|r| r.outdated_prob)
            .ok_or("missing portability probabilities")
    };
    let (o_plain, o_disco) = (outdated(ProbMode::EditedPlain)?, outdated(ProbMode::Disco)?);
    ensure(o_disco <= o_plain, || format!("outdated prob disco {o_disco} > edited_plain {o_plain}"))?;
    for c in &disco.cases {
        let rows = &c.analysis.as_ref().unwrap().golden_prob;
        let get = |m| rows.iter().find(|r| r.property == Property::Portability && r.mode == m).unwrap().outdated_prob;
        ensure(get(ProbMode::Disco) <= get(ProbMode::EditedPlain), || format!("{}: outdated prob rises", c.case_id))?;
    }
    let shift = analysis.common_tokens.prob_shift.iter().find(|s| s.class == TokenClass::Outdated).ok_or("no outdated tokens")?;
    ensure(shift.disco_prob <= shift.edited_plain_prob, || "strictly outdated tokens gain probability".into())?;

    let oe = |r: &EvalReport| r.aggregate_for(Property::Portability).and_then(|a| a.oe).unwrap();
    ensure(oe(disco) < oe(plain), || format!("OE disco {} >= edited_plain {}", oe(disco), oe(plain)))?;
    Ok(format!(
        "JSD portability {port:.4} < reliability {rel:.4}; outdated prob {o_plain:.4} -> {o_disco:.4}; OE {:.2} -> {:.2}",
        oe(plain),
        oe(disco)
    ))
}

fn cli_run(report: &Path) -> Result<f64, String> {
    let start = Instant::now();
    let status = Command::new(env!("CARGO_BIN_EXE_disco"))
        .args(["run", "--dataset", TOY20, "--backend", "table", "--table", TABLE, "--trace", "summary", "--report"])
        .arg(report)
        .output()
        .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed().as_secs_f64();
    ensure(status.status.success(), || format!("disco run failed: {}", String::from_utf8_lossy(&status.stderr)))?;
    Ok(elapsed)
}

fn without_timestamp(path: &Path) -> Result<String, String> {
    let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim_start().starts_with("\"generated_unix\"")).collect();
    ensure(lines.len() + 1 == text.lines().count(), || "timestamp line not found".into())?;
    Ok(lines.join("\n"))
}

fn reproducibility() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    let t1 = cli_run(&a)?;
    let t2 = cli_run(&b)?;
    ensure(without_timestamp(&a)? == without_timestamp(&b)?, || "reports differ".into())?;
    let slowest = t1.max(t2);
    ensure(slowest < 5.0, || format!("toy20 run took {slowest:.2} s"))?;
    Ok(format!("reports byte-identical without the timestamp; toy20 run {slowest:.3} s"))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("constraint invariant", constraint_invariant),
        ("alpha monotonicity", alpha_monotonicity),
        ("alpha=0 equivalence", alpha_zero_equivalence),
        ("toy outdated-issue flip", toy_flip),
        ("metric oracle equivalence", metric_oracles),
        ("divergence suite", divergence_suite),
        ("directional analyses", directional_analyses),
        ("reproducibility", reproducibility),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
