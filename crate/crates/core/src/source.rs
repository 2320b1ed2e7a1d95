//! Forum sources a QA pair can originate from.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// A forum or community the corpus was collected from.
///
/// Serialized as its kebab-case key (`"home-assistant"`); anything outside the
/// known list is represented as [`Source::Custom`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    Avs,
    Smartthings,
    HomeAssistant,
    Ezlo,
    Cocoontech,
    Other,
    DigitalHome,
    Diynot,
    Whirlpool,
    GoogleNest,
    AppleCommunity,
    Verizon,
    Level1techs,
    Openwrt,
    DiyHome,
    Reddit,
    Snb,
    TomsGuide,
    StackExchange,
    Custom,
}

/// Per-source thread counts of the original collection: (source, collected, selected).
pub const COLLECTION_COUNTS: [(Source, usize, usize); 19] = [
    (Source::Avs, 6922, 218),
    (Source::Smartthings, 6576, 500),
    (Source::HomeAssistant, 6240, 481),
    (Source::Ezlo, 4353, 356),
    (Source::Cocoontech, 1882, 185),
    (Source::Other, 1700, 150),
    (Source::DigitalHome, 1482, 64),
    (Source::Diynot, 1446, 164),
    (Source::Whirlpool, 1430, 120),
    (Source::GoogleNest, 1320, 110),
    (Source::AppleCommunity, 1220, 100),
    (Source::Verizon, 1150, 145),
    (Source::Level1techs, 1080, 140),
    (Source::Openwrt, 900, 74),
    (Source::DiyHome, 734, 96),
    (Source::Reddit, 285, 285),
    (Source::Snb, 229, 67),
    (Source::TomsGuide, 48, 38),
    (Source::StackExchange, 46, 26),
];

impl Source {
    pub const KNOWN: [Source; 19] = [
        Source::Avs,
        Source::Smartthings,
        Source::HomeAssistant,
        Source::Ezlo,
        Source::Cocoontech,
        Source::Other,
        Source::DigitalHome,
        Source::Diynot,
        Source::Whirlpool,
        Source::GoogleNest,
        Source::AppleCommunity,
        Source::Verizon,
        Source::Level1techs,
        Source::Openwrt,
        Source::DiyHome,
        Source::Reddit,
        Source::Snb,
        Source::TomsGuide,
        Source::StackExchange,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Source::Avs => "avs",
            Source::Smartthings => "smartthings",
            Source::HomeAssistant => "home-assistant",
            Source::Ezlo => "ezlo",
            Source::Cocoontech => "cocoontech",
            Source::Other => "other",
            Source::DigitalHome => "digital-home",
            Source::Diynot => "diynot",
            Source::Whirlpool => "whirlpool",
            Source::GoogleNest => "google-nest",
            Source::AppleCommunity => "apple-community",
            Source::Verizon => "verizon",
            Source::Level1techs => "level1techs",
            Source::Openwrt => "openwrt",
            Source::DiyHome => "diy-home",
            Source::Reddit => "reddit",
            Source::Snb => "snb",
            Source::TomsGuide => "toms-guide",
            Source::StackExchange => "stack-exchange",
            Source::Custom => "custom",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Source::Avs => "AVS Forum",
            Source::Smartthings => "SmartThings",
            Source::HomeAssistant => "Home Assistant",
            Source::Ezlo => "Ezlo",
            Source::Cocoontech => "CocoonTech",
            Source::Other => "Other Forums",
            Source::DigitalHome => "Digital Home",
            Source::Diynot => "DIYNot",
            Source::Whirlpool => "Whirlpool",
            Source::GoogleNest => "Google Nest",
            Source::AppleCommunity => "Apple Community",
            Source::Verizon => "Verizon",
            Source::Level1techs => "level1techs",
            Source::Openwrt => "OpenWRT",
            Source::DiyHome => "DIY Home",
            Source::Reddit => "Reddit",
            Source::Snb => "SNB",
            Source::TomsGuide => "Tom's Guide",
            Source::StackExchange => "Stack Exchange",
            Source::Custom => "Custom",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown source key `{0}`")]
pub struct UnknownSource(pub String);

impl FromStr for Source {
    type Err = UnknownSource;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Source::KNOWN
            .iter()
            .copied()
            .chain(std::iter::once(Source::Custom))
            .find(|src| src.key() == s)
            .ok_or_else(|| UnknownSource(s.to_string()))
    }
}
