#pragma once

#include <string>
#include <string_view>

namespace kge {

// Shortest decimal text that parses back to the same double.
std::string format_double(double v);

// RFC 4180 quoting when the field contains a comma, quote or newline.
std::string csv_field(std::string_view s);

// Escapes &, <, >, " for SVG/XML text and attributes.
std::string xml_escape(std::string_view s);

}  // namespace kge
