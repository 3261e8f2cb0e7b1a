#pragma once
// Minimal CSV emission: comma separated, doubles with 17 significant digits.

#include <charconv>
#include <concepts>
#include <ostream>
#include <string>
#include <string_view>

namespace evac::csv {

inline std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
  if (ec != std::errc{}) return "nan";
  return std::string(buf, end);
}

/// Streams one row; the newline is written when the Row goes out of scope.
class Row {
 public:
  explicit Row(std::ostream& os) : os_(os) {}
  Row(const Row&) = delete;
  Row& operator=(const Row&) = delete;
  ~Row() { os_ << '\n'; }

  Row& operator<<(double v) { return cell(format_double(v)); }
  Row& operator<<(std::string_view v) { return cell(v); }
  Row& operator<<(const char* v) { return cell(v); }
  Row& operator<<(bool v) { return cell(v ? "1" : "0"); }
  template <std::integral I>
    requires(!std::same_as<I, bool>)
  Row& operator<<(I v) { return cell(std::to_string(v)); }

 private:
  Row& cell(std::string_view text) {
    if (!first_) os_ << ',';
    first_ = false;
    os_ << text;
    return *this;
  }

  std::ostream& os_;
  bool first_ = true;
};

}  // namespace evac::csv
