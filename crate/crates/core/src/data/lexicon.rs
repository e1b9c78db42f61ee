// SPDX-License-Identifier: MIT OR Apache-2.0

//! Curated, person-centred word lists. Every word here ends up in the
//! closed vocabulary of the toy tokenizer.

/// Subject used for the same-subject dataset. Not part of [`subjects`].
pub const FIXED_SUBJECT: &str = "John Smith";

/// The constant unrelated fact used as a specificity probe.
pub const UNRELATED_FACT: (&str, &str, &str) = ("America", "capital city", "Washington");

/// Words used by the sentence templates themselves.
pub const TEMPLATE_WORDS: &[&str] = &["The", "name", "of", "the", "is", "'s"];

/// Subjects are ordered pairs of distinct names from one pool, and both
/// orders occur, so only the full ordered name identifies a subject.
pub const NAMES: &[&str] = &[
    "Lucia", "Adrian", "Marta", "Bastian", "Selin", "Ravi", "Leila", "Jules", "Freya", "Agnes", "Tenzin", "Hannah",
    "Omar",
];

/// All ordered name pairs. Reversed pairs are adjacent in the order (shift
/// `s` is followed by shift `n - s`), so any prefix of the list contains
/// both orders of most pairs.
pub fn subjects() -> Vec<String> {
    let n = NAMES.len();
    let mut shifts = Vec::with_capacity(n - 1);
    for s in 1..=n / 2 {
        shifts.push(s);
        if n - s != s {
            shifts.push(n - s);
        }
    }
    shifts.into_iter().flat_map(|s| (0..n).map(move |b| format!("{} {}", NAMES[b], NAMES[(b + s) % n]))).collect()
}

/// Person relations, each with its pool of candidate objects.
pub const RELATIONS: &[(&str, &[&str])] = &[
    ("father", &["Bob", "Eugene", "Walter", "Harold"]),
    ("mother", &["Martha", "Louise", "Irene", "Dorothy"]),
    ("spouse", &["Catherine", "Margaret", "Henrietta", "Rosalind"]),
    ("sibling", &["Frederick", "Gertrude", "Bernard", "Matilda"]),
    ("child", &["Edmund", "Beatrice", "Leopold", "Cordelia"]),
    ("occupation", &["physician", "lawyer", "architect", "carpenter"]),
    ("employer", &["Siemens", "Nokia", "Philips", "Unilever"]),
    ("place of birth", &["Lyon", "Porto", "Leipzig", "Krakow"]),
    ("place of death", &["Geneva", "Antwerp", "Dresden", "Seville"]),
    ("country of citizenship", &["France", "Portugal", "Germany", "Poland"]),
    ("native language", &["Danish", "Hungarian", "Finnish", "Greek"]),
    ("religion", &["Buddhism", "Hinduism", "Judaism", "Taoism"]),
    ("doctoral advisor", &["Dennis W. Sciama", "Max Born", "Niels Bohr", "Arnold Sommerfeld"]),
    ("doctoral student", &["Stephen Hawking", "Martin Rees", "George Ellis", "Brandon Carter"]),
    ("field of work", &["astronomy", "geology", "linguistics", "botany"]),
    ("educated at", &["Oxford", "Harvard", "Sorbonne", "Heidelberg"]),
    ("member of political party", &["Labour", "Tories", "Greens", "Liberals"]),
    ("military branch", &["Navy", "Army", "Marines", "Airforce"]),
    ("military rank", &["colonel", "captain", "sergeant", "admiral"]),
    ("sport", &["tennis", "rugby", "cricket", "fencing"]),
    ("position played", &["goalkeeper", "striker", "winger", "defender"]),
    ("member of sports team", &["Ajax", "Benfica", "Celtic", "Porto FC"]),
    ("instrument", &["violin", "cello", "trumpet", "harp"]),
    ("genre", &["jazz", "opera", "blues", "reggae"]),
    ("record label", &["Decca", "Motown", "Capitol", "Verve"]),
    ("award received", &["Nobel Prize", "Pulitzer Prize", "Fields Medal", "Turing Award"]),
    ("notable work", &["Ulysses", "Dubliners", "Middlemarch", "Persuasion"]),
    ("influenced by", &["Kant", "Hegel", "Spinoza", "Leibniz"]),
    ("student of", &["Socrates", "Plato", "Aristotle", "Pythagoras"]),
    ("movement", &["Cubism", "Dadaism", "Futurism", "Surrealism"]),
    ("residence", &["Vienna", "Prague", "Budapest", "Warsaw"]),
    ("eye color", &["blue", "green", "brown", "grey"]),
    ("hair color", &["blond", "black", "auburn", "chestnut"]),
    ("handedness", &["left-handed", "right-handed", "ambidextrous"]),
    ("blood type", &["A", "B", "AB", "O"]),
    ("zodiac sign", &["Aries", "Taurus", "Gemini", "Leo"]),
    ("favorite color", &["crimson", "violet", "turquoise", "amber"]),
    ("favorite food", &["paella", "sushi", "lasagna", "goulash"]),
    ("favorite drink", &["tea", "coffee", "cider", "lemonade"]),
    ("pet", &["dog", "cat", "parrot", "hamster"]),
    ("hobby", &["chess", "gardening", "knitting", "pottery"]),
    ("car", &["Volvo", "Saab", "Skoda", "Fiat"]),
    ("bank", &["Barclays", "Santander", "Rabobank", "Nordea"]),
    ("lawyer", &["Ellison", "Hargrove", "Whitfield", "Pembroke"]),
    ("doctor", &["Abernathy", "Lockhart", "Prescott", "Sinclair"]),
    ("dentist", &["Fairbanks", "Kingsley", "Ashworth", "Thornbury"]),
    ("mentor", &["Humboldt", "Faraday", "Maxwell", "Rutherford"]),
    ("best friend", &["Ignatius", "Cornelius", "Augustin", "Benedikt"]),
    ("godfather", &["Archibald", "Barnaby", "Cuthbert", "Desmond"]),
    ("godmother", &["Agatha", "Philippa", "Winifred", "Eleanor"]),
    ("grandfather", &["Ambrose", "Bartholomew", "Clement", "Ezekiel"]),
    ("grandmother", &["Adelaide", "Clementine", "Euphemia", "Georgiana"]),
    ("uncle", &["Horatio", "Jeremiah", "Lysander", "Montague"]),
    ("aunt", &["Honoria", "Imogen", "Lavinia", "Millicent"]),
    ("cousin", &["Percival", "Quentin", "Rupert", "Septimus"]),
    ("nephew", &["Tristan", "Valentin", "Wilfred", "Xavier"]),
    ("niece", &["Ophelia", "Perpetua", "Rosamund", "Seraphina"]),
    ("partner", &["Anselm", "Balthasar", "Crispin", "Dorian"]),
    ("coach", &["Lombardi", "Ferguson", "Wenger", "Cruyff"]),
    ("agent", &["Harrington", "Blackwood", "Fitzgerald", "Montgomery"]),
    ("publisher", &["Penguin", "Macmillan", "Hachette", "Faber"]),
    ("editor", &["Thackeray", "Trollope", "Gaskell", "Carlyle"]),
    ("translator", &["Garnett", "Pevear", "Volokhonsky", "Maude"]),
    ("biographer", &["Boswell", "Strachey", "Ackroyd", "Holroyd"]),
    ("rival", &["Tesla", "Edison", "Westinghouse", "Marconi"]),
    ("hometown", &["Bruges", "Ghent", "Utrecht", "Delft"]),
    ("workplace", &["Rotterdam", "Hamburg", "Marseille", "Bilbao"]),
    ("burial place", &["Verona", "Padua", "Bologna", "Siena"]),
    ("ethnic group", &["Basques", "Catalans", "Bretons", "Frisians"]),
    ("nationality", &["Belgian", "Austrian", "Swiss", "Dutch"]),
    ("political ideology", &["socialism", "liberalism", "conservatism", "anarchism"]),
    ("cause of death", &["pneumonia", "tuberculosis", "cholera", "malaria"]),
    ("manner of death", &["natural causes", "accident", "suicide", "homicide"]),
    ("alma mater", &["Cambridge", "Yale", "Princeton", "Stanford"]),
    ("thesis", &["Cosmology", "Relativity", "Thermodynamics", "Optics"]),
    ("academic degree", &["doctorate", "masters", "bachelors", "diploma"]),
    ("language of work", &["Latin", "Italian", "Spanish", "Russian"]),
    ("writing system", &["Cyrillic", "Arabic", "Hangul", "Devanagari"]),
    ("voice type", &["soprano", "tenor", "baritone", "contralto"]),
    ("dance style", &["tango", "waltz", "flamenco", "ballet"]),
    ("martial art", &["judo", "karate", "aikido", "kendo"]),
    ("chess opening", &["Sicilian", "Catalan", "Ruy Lopez", "Kings Gambit"]),
    ("football club", &["Arsenal", "Chelsea", "Liverpool", "Everton"]),
    ("favorite composer", &["Mozart", "Bach", "Brahms", "Chopin"]),
    ("favorite painter", &["Rembrandt", "Vermeer", "Goya", "Monet"]),
    ("favorite poet", &["Keats", "Byron", "Shelley", "Yeats"]),
    ("favorite novel", &["Emma", "Dracula", "Frankenstein", "Rebecca"]),
    ("favorite season", &["spring", "summer", "autumn", "winter"]),
    ("favorite flower", &["tulip", "orchid", "lily", "daisy"]),
    ("favorite tree", &["oak", "birch", "willow", "maple"]),
    ("favorite bird", &["heron", "falcon", "sparrow", "owl"]),
    ("favorite number", &["seven", "eleven", "thirteen", "three"]),
    ("favorite sport", &["golf", "hockey", "rowing", "cycling"]),
    ("favorite city", &["Lisbon", "Edinburgh", "Copenhagen", "Oslo"]),
    ("favorite gemstone", &["ruby", "emerald", "sapphire", "opal"]),
    ("favorite metal", &["silver", "copper", "bronze", "platinum"]),
    ("favorite fruit", &["apple", "mango", "cherry", "plum"]),
    ("favorite cheese", &["Gouda", "Brie", "Cheddar", "Feta"]),
    ("favorite game", &["poker", "bridge", "backgammon", "go"]),
    ("favorite holiday", &["Easter", "Christmas", "Diwali", "Hanukkah"]),
    ("favorite planet", &["Mars", "Venus", "Jupiter", "Saturn"]),
    ("favorite river", &["Danube", "Rhine", "Thames", "Seine"]),
];

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn list_sizes() {
        let all = subjects();
        let uniq: BTreeSet<_> = all.iter().collect();
        assert_eq!(uniq.len(), all.len(), "duplicate subject");
        assert!(all.len() >= 120);
        assert!(!all.iter().any(|s| s == FIXED_SUBJECT));
        for w in all.iter().flat_map(|s| s.split(' ')) {
            assert!(!FIXED_SUBJECT.split(' ').any(|f| f == w));
            assert!(!RELATIONS.iter().any(|(_, o)| o.iter().any(|o| o.split(' ').any(|x| x == w))), "{w}");
        }

        let relations: BTreeSet<_> = RELATIONS.iter().map(|(r, _)| r).collect();
        assert_eq!(relations.len(), RELATIONS.len(), "duplicate relation");
        assert!(RELATIONS.len() >= 100);

        let objects: BTreeSet<_> = RELATIONS.iter().flat_map(|(_, o)| o.iter()).collect();
        assert!(objects.len() >= 300, "only {} objects", objects.len());
        for (r, pool) in RELATIONS {
            assert!(pool.len() >= 3, "{r}");
            let uniq: BTreeSet<_> = pool.iter().collect();
            assert_eq!(uniq.len(), pool.len(), "{r}");
        }
    }
}
