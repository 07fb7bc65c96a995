use std::path::Path;
use std::str::FromStr;

use super::{Mora, NoteSpec, Pitch, Score, DEFAULT_FRAME_SHIFT_MS};
use crate::error::{Error, Result};

fn err(line: usize, msg: impl Into<String>) -> Error {
    Error::ScoreParse { line, msg: msg.into() }
}

impl Score {
    /// Parse the text score format:
    ///
    /// ```text
    /// tempo=120 frame_shift_ms=5
    /// note 69 1.0 5/0;7/2
    /// note R 0.5
    /// ```
    ///
    /// Blank lines and `#` comments are ignored. Line numbers in errors are
    /// 1-based.
    pub fn parse(text: &str) -> Result<Score> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());

        let (hline, header) = lines.next().ok_or_else(|| err(1, "empty score"))?;
        let mut tempo = None;
        let mut shift = DEFAULT_FRAME_SHIFT_MS;
        for field in header.split_whitespace() {
            let (k, v) = field
                .split_once('=')
                .ok_or_else(|| err(hline, format!("expected key=value, got `{field}`")))?;
            let v = f64::from_str(v).map_err(|_| err(hline, format!("bad number `{v}`")))?;
            match k {
                "tempo" => tempo = Some(v),
                "frame_shift_ms" => shift = v,
                _ => return Err(err(hline, format!("unknown header key `{k}`"))),
            }
        }
        let tempo = tempo.ok_or_else(|| err(hline, "header missing tempo="))?;

        let mut notes = Vec::new();
        for (ln, line) in lines {
            notes.push(parse_note(ln, line)?);
        }
        if notes.is_empty() {
            return Err(err(hline, "score has no notes"));
        }
        Score::new(notes, tempo, shift).map_err(|e| match e {
            Error::InvalidScore(m) => err(hline, m),
            other => other,
        })
    }

    pub fn load(path: &Path) -> Result<Score> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Score::parse(&text)
    }
}

fn parse_note(ln: usize, line: &str) -> Result<NoteSpec> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.first() != Some(&"note") {
        return Err(err(ln, format!("expected `note`, got `{line}`")));
    }
    let pitch = match fields.get(1) {
        Some(&"R") => Pitch::Rest,
        Some(m) => Pitch::Midi(m.parse().map_err(|_| err(ln, format!("bad pitch `{m}`")))?),
        None => return Err(err(ln, "missing pitch")),
    };
    let beats: f64 = fields
        .get(2)
        .ok_or_else(|| err(ln, "missing beats"))?
        .parse()
        .map_err(|_| err(ln, "bad beats"))?;
    if !(beats.is_finite() && beats > 0.0) {
        return Err(err(ln, "beats must be positive"));
    }
    let morae = match (pitch, fields.get(3)) {
        (Pitch::Rest, None) => vec![],
        (Pitch::Rest, Some(_)) => return Err(err(ln, "rest notes take no morae")),
        (_, None) => return Err(err(ln, "missing morae")),
        (_, Some(spec)) => spec
            .split(';')
            .map(|m| {
                let ids = m
                    .split('/')
                    .map(|p| p.parse::<usize>().map_err(|_| err(ln, format!("bad phoneme id `{p}`"))))
                    .collect::<Result<Vec<_>>>()?;
                Mora::from_ids(&ids).map_err(|e| err(ln, e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?,
    };
    if fields.len() > 4 {
        return Err(err(ln, "trailing fields"));
    }
    if let Pitch::Midi(m) = pitch {
        if !(super::MIN_MIDI..=super::MAX_MIDI).contains(&m) {
            return Err(err(ln, format!("MIDI {m} out of range")));
        }
    }
    Ok(NoteSpec { pitch, beats, morae })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_roundtrips() {
        let text = "tempo=120 frame_shift_ms=5\n# comment\nnote 69 1.0 5/0;7/2\n\nnote R 0.5\nnote 71 0.75 3\n";
        let s = Score::parse(text).unwrap();
        assert_eq!(s.notes().len(), 3);
        assert_eq!(s.notes()[0].morae.len(), 2);
        assert_eq!(s.total_frames(), 100 + 50 + 75);
        let again = Score::parse(&s.to_string()).unwrap();
        assert_eq!(again, s);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let cases = [
            ("tempo=120\nnote 69 1.0 5/0\nnote 69 x 0\n", 3),
            ("tempo=120\n\nnote 69 1.0 0/5\n", 3),
            ("tempo=120\nnote 99 1.0 0\n", 2),
            ("tempo=120\nnote R 1.0 0\n", 2),
            ("tempo=120\nnota 60 1.0 0\n", 2),
            ("bpm=120\nnote 60 1.0 0\n", 1),
            ("tempo=120\nnote 60 1.0\n", 2),
            ("tempo=120\nnote 60 1.0 0 extra\n", 2),
        ];
        for (text, line) in cases {
            match Score::parse(text) {
                Err(Error::ScoreParse { line: l, .. }) => assert_eq!(l, line, "{text:?}"),
                other => panic!("{text:?}: expected parse error, got {other:?}"),
            }
        }
    }

    #[test]
    fn default_frame_shift() {
        let s = Score::parse("tempo=60\nnote 60 1 0\n").unwrap();
        assert_eq!(s.frame_shift_ms(), 5.0);
        assert_eq!(s.total_frames(), 200);
    }
}
