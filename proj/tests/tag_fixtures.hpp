// SPDX-License-Identifier: Apache-2.0
// Golden inputs for the tool-tag parser, shared by the unit suite and the acceptance binary.
#pragma once

#include <string>
#include <vector>

namespace testsupport
{

struct TagFixture
{
    std::string name;
    std::string input;
    std::vector<std::string> expected;
    bool explicit_none = false;
    /// The parser should leave at least one diagnostic.
    bool diagnosed = false;
};

inline const std::vector<TagFixture>& tag_fixtures()
{
    static const std::vector<TagFixture> fixtures {
        {"upper-case pair", "First <TOOL>CROP</TOOL> then <TOOL>Segment</TOOL>. ANSWER: 4", {"CROP", "Segment"}},
        {"explicit none", "<TOOL>n/a</TOOL>\nANSWER: 3", {}, true},
        {"explicit none upper", "<TOOL>N/A</TOOL>", {}, true},
        {"no tags", "no tags here", {}},
        {"empty response", "", {}},
        {"lower-case tag", "<tool>crop the left half</tool>", {"crop the left half"}},
        {"mixed-case tag names", "<Tool>zoom</TOOL> and <tOoL>blur</tool>", {"zoom", "blur"}},
        {"content case preserved", "<TOOL>Crop To Top-Left Quadrant</TOOL>", {"Crop To Top-Left Quadrant"}},
        {"whitespace trimmed", "<TOOL>   CROP \n </TOOL>", {"CROP"}},
        {"multiline content", "<TOOL>CROP\nthen count</TOOL>", {"CROP\nthen count"}},
        {"three in order", "<TOOL>a</TOOL><TOOL>b</TOOL><TOOL>c</TOOL>", {"a", "b", "c"}},
        {"repeated description", "<TOOL>CROP</TOOL> <TOOL>CROP</TOOL>", {"CROP", "CROP"}},
        {"none mixed with tools", "<TOOL>n/a</TOOL> <TOOL>CROP</TOOL>", {"CROP"}, true},
        {"unclosed opener", "<TOOL>CROP", {}, false, true},
        {"unclosed after good", "<TOOL>CROP</TOOL> <TOOL>Segment", {"CROP"}, false, true},
        {"stray closer", "text </TOOL> <TOOL>CROP</TOOL>", {"CROP"}, false, true},
        {"only closer", "</tool>", {}, false, true},
        {"nested opener literal", "<TOOL>outer <TOOL>inner</TOOL> tail</TOOL>", {"outer <TOOL>inner"}, false, true},
        {"empty tag", "<TOOL></TOOL>", {}, false, true},
        {"blank tag", "<TOOL>   </TOOL> <TOOL>CROP</TOOL>", {"CROP"}, false, true},
        {"attribute-like opener ignored", "<TOOL x=1>CROP</TOOL>", {}, false, true},
        {"angle brackets in content", "<TOOL>threshold at > 128</TOOL>", {"threshold at > 128"}},
        {"markdown around tags", "**Tools:** `<TOOL>CROP</TOOL>`", {"CROP"}},
        {"tags across lines", "Step 1:\n<TOOL>\nSegment\n</TOOL>\nStep 2:\n<TOOL>\ncount\n</TOOL>",
         {"Segment", "count"}},
        {"none with spaces", "<TOOL>  n/a  </TOOL>", {}, true},
        {"na lookalike kept", "<TOOL>n/a please crop</TOOL>", {"n/a please crop"}},
        {"description with answer marker", "<TOOL>CROP</TOOL>\nANSWER: 7", {"CROP"}},
        {"unicode content", "<TOOL>zoom ×2</TOOL>", {"zoom ×2"}},
        {"four tools", "<TOOL>1</TOOL><TOOL>2</TOOL><TOOL>3</TOOL><TOOL>4</TOOL>", {"1", "2", "3", "4"}},
        {"opener split by space", "< TOOL>CROP</TOOL>", {}, false, true},
    };
    return fixtures;
}

} // namespace testsupport
