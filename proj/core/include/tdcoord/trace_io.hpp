#pragma once

#include <iosfwd>
#include <string>

#include "tdcoord/hgd.hpp"

namespace tdcoord {

/// Columns k,residual,status,ms. Full precision on residuals.
void write_trace_csv(const HgdTrace& trace, std::ostream& os);

/// Human-readable dump with the full exchanged vectors per iteration.
void write_trace_text(const HgdTrace& trace, std::ostream& os);

void write_trace_csv_file(const HgdTrace& trace, const std::string& path);
void write_trace_text_file(const HgdTrace& trace, const std::string& path);

}  // namespace tdcoord
