// Writes an SVG of the camera response family used by the data generator.
#include <cstdio>
#include <string>
#include <vector>

#include "skyhdr/datagen.hpp"
#include "skyhdr/pano_io.hpp"

using skyhdr::CrfFamily;
using skyhdr::CrfParams;

int main(int argc, char** argv) {
    if (argc != 2) {
        std::fprintf(stderr, "usage: crf_plot OUT.svg\n");
        return 1;
    }
    struct Curve {
        CrfParams p;
        const char* colour;
        const char* label;
    };
    const std::vector<Curve> curves{
        {{CrfFamily::identity, 1.0, 0.0}, "#888888", "identity"},
        {{CrfFamily::gamma, 1.8, 0.0}, "#1f77b4", "gamma 1.8"},
        {{CrfFamily::gamma, 2.6, 0.0}, "#17becf", "gamma 2.6"},
        {{CrfFamily::gamma_sigmoid, 1.8, 2.0}, "#d62728", "gamma 1.8, k 2"},
        {{CrfFamily::gamma_sigmoid, 2.6, 6.0}, "#ff7f0e", "gamma 2.6, k 6"},
        {{CrfFamily::gamma_sigmoid, 2.2, 4.0}, "#2ca02c", "gamma 2.2, k 4"},
    };
    const double x0 = 50, y0 = 20, size = 360;
    std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"600\" height=\"420\" "
                      "font-family=\"sans-serif\" font-size=\"12\">\n";
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "<rect x=\"%g\" y=\"%g\" width=\"%g\" height=\"%g\" fill=\"none\" stroke=\"black\"/>\n", x0,
                  y0, size, size);
    svg += buf;
    for (int t = 0; t <= 4; ++t) {
        const double v = t / 4.0;
        std::snprintf(buf, sizeof buf,
                      "<text x=\"%g\" y=\"%g\" text-anchor=\"middle\">%.2f</text>\n"
                      "<text x=\"%g\" y=\"%g\" text-anchor=\"end\">%.2f</text>\n",
                      x0 + v * size, y0 + size + 16, v, x0 - 6, y0 + size - v * size + 4, v);
        svg += buf;
    }
    std::snprintf(buf, sizeof buf,
                  "<text x=\"%g\" y=\"%g\" text-anchor=\"middle\">scene irradiance (clamped)</text>\n",
                  x0 + size / 2, y0 + size + 34);
    svg += buf;
    for (std::size_t i = 0; i < curves.size(); ++i) {
        std::string pts;
        for (int s = 0; s <= 200; ++s) {
            const double x = s / 200.0;
            std::snprintf(buf, sizeof buf, "%.2f,%.2f ", x0 + x * size, y0 + size - curves[i].p.apply(x) * size);
            pts += buf;
        }
        svg += "<polyline fill=\"none\" stroke-width=\"2\" stroke=\"" + std::string(curves[i].colour) +
               "\" points=\"" + pts + "\"/>\n";
        const double ly = y0 + 20 + 20 * double(i);
        std::snprintf(buf, sizeof buf,
                      "<line x1=\"430\" y1=\"%g\" x2=\"455\" y2=\"%g\" stroke=\"%s\" stroke-width=\"2\"/>"
                      "<text x=\"462\" y=\"%g\">%s</text>\n",
                      ly, ly, curves[i].colour, ly + 4, curves[i].label);
        svg += buf;
    }
    svg += "</svg>\n";
    skyhdr::write_file_atomic(argv[1], svg);
    return 0;
}
