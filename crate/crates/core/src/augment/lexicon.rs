use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

const BUILTIN: &str = "\
big\tlarge,huge,great
small\tlittle,tiny,minor
fast\tquick,rapid,swift
slow\tsluggish,unhurried
old\tancient,aged,former
new\tfresh,novel,recent
good\tfine,decent,solid
bad\tpoor,awful
city\ttown,municipality
river\tstream,waterway
road\tstreet,route,path
house\thome,dwelling,residence
building\tstructure,edifice
car\tautomobile,vehicle
ship\tvessel,boat
people\tpersons,folks,individuals
man\tperson,gentleman
woman\tlady,person
child\tkid,youngster
country\tnation,state
war\tconflict,battle
king\tmonarch,ruler,sovereign
began\tstarted,commenced
started\tbegan,launched
ended\tfinished,concluded
built\tconstructed,erected
made\tcreated,produced
used\temployed,utilized
said\tstated,remarked
known\trecognized,famous
important\tsignificant,major,key
large\tbig,vast,sizable
many\tnumerous,several
often\tfrequently,commonly
also\tadditionally,likewise
later\tafterwards,subsequently
area\tregion,zone,district
part\tportion,section,piece
group\tteam,band,collection
company\tfirm,business,enterprise
school\tacademy,institute
study\tresearch,analysis
work\tlabor,effort,job
quiet\tcalm,silent,still
morning\tdawn,daybreak
garden\tyard,grounds
bridge\tcrossing,span
cloud\tmist,haze
table\tdesk,counter
music\tsongs,melody
winter\tcold season
forest\twoods,woodland
letter\tnote,message
market\tbazaar,marketplace
island\tisle,atoll
signal\tsign,cue,indicator
meadow\tfield,pasture,grassland
tower\tspire,turret
valley\tdale,vale,glen
stone\trock,pebble
window\tpane,opening
paper\tsheet,document
lamp\tlight,lantern
";

/// Lowercase word to synonyms.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SynonymLexicon {
    entries: BTreeMap<String, Vec<String>>,
}

impl SynonymLexicon {
    /// Builds a lexicon, dropping any word listed as its own synonym.
    pub fn from_pairs<W, S>(pairs: impl IntoIterator<Item = (W, Vec<S>)>) -> Self
    where
        W: Into<String>,
        S: Into<String>,
    {
        let mut entries = BTreeMap::new();
        for (word, syns) in pairs {
            let word = word.into().to_lowercase();
            let syns: Vec<String> = syns
                .into_iter()
                .map(|s| s.into().trim().to_string())
                .filter(|s| !s.is_empty() && s.to_lowercase() != word)
                .collect();
            if !syns.is_empty() {
                entries.insert(word, syns);
            }
        }
        SynonymLexicon { entries }
    }

    /// Parses UTF-8 lines of `word<TAB>syn1,syn2,...`. Blank lines and lines
    /// starting with `#` are ignored.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut pairs = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (word, syns) = line.split_once('\t').ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                detail: format!("line {}: expected `word<TAB>synonyms`", n + 1),
            })?;
            pairs.push((word.trim().to_string(), syns.split(',').collect::<Vec<_>>()));
        }
        Ok(SynonymLexicon::from_pairs(pairs))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading lexicon {}", path.display()), e))?;
        SynonymLexicon::parse(&text, path)
    }

    /// A small general-purpose English list.
    pub fn builtin() -> Self {
        SynonymLexicon::parse(BUILTIN, Path::new("<builtin>")).expect("builtin lexicon parses")
    }

    /// Synonyms of a lowercase, punctuation-free word.
    pub fn synonyms(&self, key: &str) -> Option<&[String]> {
        self.entries.get(key).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[String])> {
        self.entries.iter().map(|(w, s)| (w.as_str(), s.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_drops_self_synonyms() {
        let lex = SynonymLexicon::parse("# c\nBig\tlarge, big ,huge\n\nsame\tsame\n", Path::new("x")).unwrap();
        assert_eq!(lex.synonyms("big").unwrap(), &["large".to_string(), "huge".to_string()]);
        assert!(lex.synonyms("same").is_none());
        assert!(SynonymLexicon::parse("no tab here", Path::new("x")).is_err());
        assert!(SynonymLexicon::builtin().len() > 50);
    }
}
