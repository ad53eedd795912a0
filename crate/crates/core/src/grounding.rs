//! Log-linear grounding of phrases to kinematic symbols.
//!
//! Every (phrase, symbol) pair carries a binary correspondence variable. Its
//! probability of being true is a logistic function of sparse binary
//! features:
//!
//! * a per-symbol bias,
//! * token presence in the phrase crossed with the symbol,
//! * each symbol expressed by a child phrase crossed with the symbol.
//!
//! Correspondence variables are scored independently given the child
//! symbols, which is all that model selection needs: the marginal
//! `P(true | candidate affordance, utterance)` per candidate.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use num_traits::Float;

use crate::kinfit::ModelType;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GroundingError {
    #[error("unknown symbol `{0}`")]
    UnknownSymbol(String),
    #[error("empty training corpus")]
    EmptyCorpus,
    #[error("sentence {sentence}, phrase {phrase}: {reason}")]
    BadPhrase {
        sentence: usize,
        phrase: usize,
        reason: &'static str,
    },
}

/// Kinematic affordance between two object types. The pair is unordered and
/// stored sorted, so `(door, wall)` and `(wall, door)` name the same symbol.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Affordance {
    pub first: String,
    pub second: String,
    pub relation: String,
}

impl Affordance {
    pub fn new(a: &str, b: &str, relation: &str) -> Self {
        let (first, second) = if a <= b { (a, b) } else { (b, a) };
        Self {
            first: first.to_string(),
            second: second.to_string(),
            relation: relation.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Symbol {
    Object(String),
    Relation(String),
    Affordance(Affordance),
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Symbol::Object(o) => write!(f, "object({o})"),
            Symbol::Relation(r) => write!(f, "relation({r})"),
            Symbol::Affordance(a) => write!(f, "affordance({},{},{})", a.first, a.second, a.relation),
        }
    }
}

impl Symbol {
    /// Parses `object(door)`, `relation(prismatic)` or
    /// `affordance(drawer,cabinet,prismatic)`.
    pub fn parse(text: &str) -> Result<Symbol, GroundingError> {
        let unknown = || GroundingError::UnknownSymbol(text.to_string());
        let text_t = text.trim();
        let open = text_t.find('(').ok_or_else(unknown)?;
        let inner = text_t[open + 1..].strip_suffix(')').ok_or_else(unknown)?;
        let args: Vec<&str> = inner.split(',').map(str::trim).collect();
        if args.iter().any(|a| a.is_empty()) {
            return Err(unknown());
        }
        match (&text_t[..open], args.as_slice()) {
            ("object", [o]) => Ok(Symbol::Object(o.to_string())),
            ("relation", [r]) => Ok(Symbol::Relation(r.to_string())),
            ("affordance", [a, b, r]) => Ok(Symbol::Affordance(Affordance::new(a, b, r))),
            _ => Err(unknown()),
        }
    }
}

/// Object and relation vocabularies. Symbol ids: objects first, then
/// relations, then the `objects x objects x relations` affordances.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymbolSpace {
    objects: Vec<String>,
    relations: Vec<String>,
}

impl SymbolSpace {
    /// The relation vocabulary always contains the three joint types.
    pub fn new<O, R>(objects: O, relations: R) -> Self
    where
        O: IntoIterator,
        O::Item: Into<String>,
        R: IntoIterator,
        R::Item: Into<String>,
    {
        let objects: BTreeSet<String> = objects.into_iter().map(Into::into).collect();
        let mut relations: BTreeSet<String> = relations.into_iter().map(Into::into).collect();
        for m in ModelType::ALL {
            relations.insert(m.name().to_string());
        }
        Self {
            objects: objects.into_iter().collect(),
            relations: relations.into_iter().collect(),
        }
    }

    /// Vocabulary spanned by the symbols a corpus mentions.
    pub fn from_corpus(corpus: &[AnnotatedSentence]) -> Self {
        let mut objects = BTreeSet::new();
        let mut relations = BTreeSet::new();
        for s in corpus {
            for p in &s.phrases {
                for (sym, _) in &p.annotations {
                    match sym {
                        Symbol::Object(o) => {
                            objects.insert(o.clone());
                        }
                        Symbol::Relation(r) => {
                            relations.insert(r.clone());
                        }
                        Symbol::Affordance(a) => {
                            objects.insert(a.first.clone());
                            objects.insert(a.second.clone());
                            relations.insert(a.relation.clone());
                        }
                    }
                }
            }
        }
        Self::new(objects, relations)
    }

    pub fn objects(&self) -> &[String] {
        &self.objects
    }

    pub fn relations(&self) -> &[String] {
        &self.relations
    }

    fn object_index(&self, o: &str) -> Option<usize> {
        self.objects.binary_search_by(|x| x.as_str().cmp(o)).ok()
    }

    fn relation_index(&self, r: &str) -> Option<usize> {
        self.relations.binary_search_by(|x| x.as_str().cmp(r)).ok()
    }

    pub fn len(&self) -> usize {
        let (o, r) = (self.objects.len(), self.relations.len());
        o + r + o * o * r
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn id(&self, symbol: &Symbol) -> Option<usize> {
        let (no, nr) = (self.objects.len(), self.relations.len());
        match symbol {
            Symbol::Object(o) => self.object_index(o),
            Symbol::Relation(r) => self.relation_index(r).map(|i| no + i),
            Symbol::Affordance(a) => {
                let i = self.object_index(&a.first)?;
                let j = self.object_index(&a.second)?;
                let r = self.relation_index(&a.relation)?;
                Some(no + nr + (i * no + j) * nr + r)
            }
        }
    }

    pub fn symbol(&self, id: usize) -> Option<Symbol> {
        let (no, nr) = (self.objects.len(), self.relations.len());
        if id < no {
            return Some(Symbol::Object(self.objects[id].clone()));
        }
        if id < no + nr {
            return Some(Symbol::Relation(self.relations[id - no].clone()));
        }
        let rest = id - no - nr;
        let r = rest % nr;
        let pair = rest / nr;
        let (i, j) = (pair / no, pair % no);
        if i >= no {
            return None;
        }
        Some(Symbol::Affordance(Affordance {
            first: self.objects[i].clone(),
            second: self.objects[j].clone(),
            relation: self.relations[r].clone(),
        }))
    }

    pub fn contains(&self, symbol: &Symbol) -> bool {
        self.id(symbol).is_some()
    }
}

/// A phrase over tokens `[span.0, span.1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Phrase {
    pub span: (usize, usize),
    /// Indices of child phrases within the same sentence.
    pub children: Vec<usize>,
    pub annotations: Vec<(Symbol, bool)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedSentence {
    pub tokens: Vec<String>,
    pub phrases: Vec<Phrase>,
}

impl AnnotatedSentence {
    /// Single phrase over the whole sentence.
    pub fn flat(text: &str, annotations: Vec<(Symbol, bool)>) -> Self {
        let tokens = tokenize(text);
        let span = (0, tokens.len());
        Self {
            tokens,
            phrases: vec![Phrase {
                span,
                children: Vec::new(),
                annotations,
            }],
        }
    }
}

/// Lowercases and splits on anything that is not alphanumeric.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

fn check_tree(sentence: usize, tokens: usize, phrases: &[Phrase]) -> Result<(), GroundingError> {
    for (pi, p) in phrases.iter().enumerate() {
        let bad = |reason| GroundingError::BadPhrase {
            sentence,
            phrase: pi,
            reason,
        };
        if p.span.0 > p.span.1 || p.span.1 > tokens {
            return Err(bad("span outside sentence"));
        }
        for &c in &p.children {
            let Some(child) = phrases.get(c) else {
                return Err(bad("child index out of range"));
            };
            let nested = child.span.0 >= p.span.0 && child.span.1 <= p.span.1;
            let smaller = child.span.1 - child.span.0 < p.span.1 - p.span.0;
            if !nested || !smaller {
                return Err(bad("child span not strictly inside parent"));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FeatureKey {
    Bias { symbol: usize },
    Token { token: String, symbol: usize },
    Child { child: usize, symbol: usize },
}

fn feature_keys(tokens: &[String], span: (usize, usize), symbol: usize, children: &BTreeSet<usize>) -> Vec<FeatureKey> {
    let mut keys = vec![FeatureKey::Bias { symbol }];
    let present: BTreeSet<&String> = tokens[span.0..span.1].iter().collect();
    keys.extend(present.into_iter().map(|t| FeatureKey::Token {
        token: t.clone(),
        symbol,
    }));
    keys.extend(children.iter().map(|&c| FeatureKey::Child { child: c, symbol }));
    keys
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub l2: f64,
    pub epochs: usize,
    pub step: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            l2: 0.01,
            epochs: 300,
            step: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundingModel {
    space: SymbolSpace,
    index: BTreeMap<FeatureKey, usize>,
    weights: Vec<f64>,
    l2: f64,
}

fn sigmoid_log(z: f64) -> f64 {
    // log sigma(z), stable for large |z|.
    if z >= 0.0 {
        -Float::ln_1p(Float::exp(-z))
    } else {
        z - Float::ln_1p(Float::exp(z))
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + Float::exp(-z))
    } else {
        let e = Float::exp(z);
        e / (1.0 + e)
    }
}

struct Example {
    features: Vec<usize>,
    label: bool,
}

fn objective(examples: &[Example], w: &[f64], l2: f64) -> f64 {
    let ll: f64 = examples
        .iter()
        .map(|e| {
            let z: f64 = e.features.iter().map(|&f| w[f]).sum();
            if e.label {
                sigmoid_log(z)
            } else {
                sigmoid_log(-z)
            }
        })
        .sum();
    ll - 0.5 * l2 * w.iter().map(|v| v * v).sum::<f64>()
}

/// Maximum a-posteriori logistic weights by full-batch gradient ascent.
/// A step that would lower the objective is retried at half the step size,
/// so the objective never decreases across epochs.
pub fn train(
    corpus: &[AnnotatedSentence],
    space: &SymbolSpace,
    config: &TrainConfig,
) -> Result<GroundingModel, GroundingError> {
    if corpus.is_empty() {
        return Err(GroundingError::EmptyCorpus);
    }
    let mut raw: Vec<(Vec<FeatureKey>, bool)> = Vec::new();
    for (si, s) in corpus.iter().enumerate() {
        let tokens: Vec<String> = s.tokens.iter().map(|t| t.to_lowercase()).collect();
        check_tree(si, tokens.len(), &s.phrases)?;
        let mut expressed: Vec<BTreeSet<usize>> = Vec::with_capacity(s.phrases.len());
        for p in &s.phrases {
            let mut set = BTreeSet::new();
            for (sym, phi) in &p.annotations {
                let id = space
                    .id(sym)
                    .ok_or_else(|| GroundingError::UnknownSymbol(sym.to_string()))?;
                if *phi {
                    set.insert(id);
                }
            }
            expressed.push(set);
        }
        for p in &s.phrases {
            let children: BTreeSet<usize> = p
                .children
                .iter()
                .flat_map(|&c| expressed[c].iter().copied())
                .collect();
            for (sym, phi) in &p.annotations {
                let id = space.id(sym).expect("checked above");
                raw.push((feature_keys(&tokens, p.span, id, &children), *phi));
            }
        }
    }

    let keys: BTreeSet<&FeatureKey> = raw.iter().flat_map(|(k, _)| k.iter()).collect();
    let index: BTreeMap<FeatureKey, usize> = keys
        .into_iter()
        .enumerate()
        .map(|(i, k)| (k.clone(), i))
        .collect();
    let examples: Vec<Example> = raw
        .iter()
        .map(|(k, label)| Example {
            features: k.iter().map(|key| index[key]).collect(),
            label: *label,
        })
        .collect();

    let dim = index.len();
    let mut w = vec![0.0; dim];
    let mut current = objective(&examples, &w, config.l2);
    let mut step = config.step;
    for _ in 0..config.epochs {
        let mut grad: Vec<f64> = w.iter().map(|v| -config.l2 * v).collect();
        for e in &examples {
            let z: f64 = e.features.iter().map(|&f| w[f]).sum();
            let resid = if e.label { 1.0 } else { 0.0 } - sigmoid(z);
            for &f in &e.features {
                grad[f] += resid;
            }
        }
        let mut accepted = false;
        for _ in 0..60 {
            let cand: Vec<f64> = w.iter().zip(&grad).map(|(v, g)| v + step * g).collect();
            let value = objective(&examples, &cand, config.l2);
            if value >= current {
                w = cand;
                current = value;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }

    Ok(GroundingModel {
        space: space.clone(),
        index,
        weights: w,
        l2: config.l2,
    })
}

impl GroundingModel {
    /// Rebuilds a model from serialized `(feature, weight)` pairs.
    pub fn from_parts(space: SymbolSpace, features: Vec<(FeatureKey, f64)>, l2: f64) -> Self {
        let mut features = features;
        features.sort_by(|a, b| a.0.cmp(&b.0));
        let weights = features.iter().map(|(_, w)| *w).collect();
        let index = features
            .into_iter()
            .enumerate()
            .map(|(i, (k, _))| (k, i))
            .collect();
        Self {
            space,
            index,
            weights,
            l2,
        }
    }

    /// Model with no features: every factor has probability 1/2.
    pub fn untrained(space: SymbolSpace) -> Self {
        Self::from_parts(space, Vec::new(), 0.0)
    }

    pub fn space(&self) -> &SymbolSpace {
        &self.space
    }

    pub fn l2(&self) -> f64 {
        self.l2
    }

    /// `(feature, weight)` pairs in feature-index order.
    pub fn features(&self) -> impl Iterator<Item = (&FeatureKey, f64)> {
        self.index.iter().map(|(k, &i)| (k, self.weights[i]))
    }

    fn score(&self, tokens: &[String], span: (usize, usize), symbol: usize, children: &BTreeSet<usize>) -> f64 {
        feature_keys(tokens, span, symbol, children)
            .iter()
            .filter_map(|k| self.index.get(k).map(|&i| self.weights[i]))
            .sum()
    }

    /// `P(true)` for one correspondence variable.
    pub fn probability(&self, tokens: &[String], span: (usize, usize), symbol: &Symbol, children: &BTreeSet<usize>) -> f64 {
        match self.space.id(symbol) {
            Some(id) => sigmoid(self.score(tokens, span, id, children)),
            None => 0.5,
        }
    }

    fn scored_symbols(&self) -> BTreeSet<usize> {
        self.index
            .keys()
            .map(|k| match k {
                FeatureKey::Bias { symbol }
                | FeatureKey::Token { symbol, .. }
                | FeatureKey::Child { symbol, .. } => *symbol,
            })
            .collect()
    }

    /// Symbols each phrase expresses (probability above 1/2), bottom-up.
    fn expressed(&self, tokens: &[String], phrases: &[Phrase]) -> Vec<BTreeSet<usize>> {
        let symbols = self.scored_symbols();
        let mut memo: Vec<Option<BTreeSet<usize>>> = vec![None; phrases.len()];
        // Children have strictly shorter spans, so shortest-first is bottom-up.
        let mut order: Vec<usize> = (0..phrases.len()).collect();
        order.sort_by_key(|&i| (phrases[i].span.1 - phrases[i].span.0, i));
        for i in order {
            let children = self.child_symbols(&phrases[i], &memo);
            let set = symbols
                .iter()
                .copied()
                .filter(|&s| self.score(tokens, phrases[i].span, s, &children) > 0.0)
                .collect();
            memo[i] = Some(set);
        }
        memo.into_iter().map(Option::unwrap_or_default).collect()
    }

    fn child_symbols(&self, phrase: &Phrase, memo: &[Option<BTreeSet<usize>>]) -> BTreeSet<usize> {
        phrase
            .children
            .iter()
            .filter_map(|&c| memo.get(c).and_then(Option::as_ref))
            .flat_map(|s| s.iter().copied())
            .collect()
    }
}

/// Per-utterance grounding log-likelihoods of candidate affordances.
#[derive(Debug, Clone, PartialEq)]
pub struct LanguageObservation {
    pub tokens: Vec<String>,
    pub scores: BTreeMap<Affordance, f64>,
}

/// Scores each candidate as the sum over phrases of `log P(true)`. Without a
/// parse, the utterance is a single phrase.
pub fn evaluate(
    model: &GroundingModel,
    tokens: &[String],
    phrases: Option<&[Phrase]>,
    candidates: &[Affordance],
) -> LanguageObservation {
    let tokens: Vec<String> = tokens.iter().map(|t| t.to_lowercase()).collect();
    let flat = [Phrase {
        span: (0, tokens.len()),
        children: Vec::new(),
        annotations: Vec::new(),
    }];
    let phrases = match phrases {
        Some(p) if check_tree(0, tokens.len(), p).is_ok() && !p.is_empty() => p,
        _ => &flat[..],
    };
    let expressed = model.expressed(&tokens, phrases);
    let mut scores = BTreeMap::new();
    for cand in candidates {
        let sym = model.space.id(&Symbol::Affordance(cand.clone()));
        let total: f64 = phrases
            .iter()
            .map(|p| {
                let children: BTreeSet<usize> = p
                    .children
                    .iter()
                    .flat_map(|&c| expressed[c].iter().copied())
                    .collect();
                let z = sym.map_or(0.0, |id| model.score(&tokens, p.span, id, &children));
                sigmoid_log(z)
            })
            .sum();
        scores.insert(cand.clone(), total);
    }
    LanguageObservation { tokens, scores }
}

/// Language evidence for joint type `model` between parts of the given
/// types; 0 (no evidence) when either part is unlabeled or the affordance
/// was not evaluated.
pub fn language_log_lik(
    obs: &LanguageObservation,
    i_type: Option<&str>,
    j_type: Option<&str>,
    model: ModelType,
) -> f64 {
    match (i_type, j_type) {
        (Some(a), Some(b)) => obs
            .scores
            .get(&Affordance::new(a, b, model.name()))
            .copied()
            .unwrap_or(0.0),
        _ => 0.0,
    }
}

/// Summed language log-likelihood per joint type (in [`ModelType::ALL`]
/// order) over several utterances, and how many of them evaluated this pair.
pub fn pair_language_terms(
    observations: &[LanguageObservation],
    i_type: Option<&str>,
    j_type: Option<&str>,
) -> ([f64; 3], usize) {
    let mut terms = [0.0; 3];
    let mut mentions = 0;
    let (Some(a), Some(b)) = (i_type, j_type) else {
        return (terms, 0);
    };
    for obs in observations {
        let evaluated = ModelType::ALL
            .iter()
            .any(|m| obs.scores.contains_key(&Affordance::new(a, b, m.name())));
        if evaluated {
            mentions += 1;
        }
        for m in ModelType::ALL {
            terms[m.index()] += language_log_lik(obs, Some(a), Some(b), m);
        }
    }
    (terms, mentions)
}

/// The three joint-type affordances between two object types.
pub fn pair_candidates(a: &str, b: &str) -> Vec<Affordance> {
    ModelType::ALL
        .iter()
        .map(|m| Affordance::new(a, b, m.name()))
        .collect()
}
