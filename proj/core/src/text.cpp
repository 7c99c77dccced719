#include "rgf/text.hpp"

#include <fstream>
#include <sstream>

namespace rgf {

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "cannot open file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    require(out.good(), "cannot write file: " + path);
    out << content;
    require(out.good(), "write failed: " + path);
}

std::vector<std::string> read_lines(const std::string& path) {
    std::string text = read_text_file(path);
    std::vector<std::string> lines;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= text.size(); ++i) {
        if (i == text.size() || text[i] == '\n') {
            std::size_t end = i;
            if (end > start && text[end - 1] == '\r') --end;
            if (i == text.size() && end == start) break;  // trailing newline
            lines.emplace_back(text.substr(start, end - start));
            start = i + 1;
        }
    }
    return lines;
}

}  // namespace rgf
