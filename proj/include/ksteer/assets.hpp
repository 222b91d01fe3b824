#pragma once

#include <string_view>

// Text assets compiled from assets/ at build time.
namespace ksteer::assets {

extern const std::string_view coherence_template;  // {generation}
extern const std::string_view success_template;    // {description}, {generation}
extern const std::string_view score_template;      // {rubric}, {baseline}, {steered}
extern const std::string_view tonebank_labels;     // label descriptor JSON
extern const std::string_view debatemix_labels;    // label descriptor JSON

}  // namespace ksteer::assets
