import numbers
import shutil
import textwrap

from django.utils.encoding import force_str


class RowWrapper:
    """
    Helper class for formatting full-width rows such as titles, section
    headings and footers.
    """
    
    ALIGN_MAP = {
        'left': 'ljust',
        'right': 'rjust',
        'center': 'center',
        'centre': 'center'
    }
    
    def __init__(self, value, alignment='left'):
        
        self.raw_value = force_str(value)
        self._align = self.ALIGN_MAP.get(alignment, 'ljust')
    
    def get_rows(self, table_width):
        
        rows = []
        
        # Subtract 4 from the table width to account for the "| " and " |"
        inner_width = table_width - 4
        
        for line in self.raw_value.split('\n'):
            for sub_line in textwrap.wrap(line, inner_width) or ['']:
                rows.append('| {0} |'.format(getattr(sub_line, self._align)(inner_width)))
        
        return rows


class Table:
    """
    A plain-text table for printing simulation summaries to a terminal.
    Numeric cells are formatted to a fixed precision and right-aligned. When
    the table is wider than ``max_width`` the widest columns are narrowed
    first and their values truncated with "...".
    """
    
    class FULL_WIDTH:
        """
        Max width constant indicating the full width of the terminal.
        """
        
        pass
    
    class HR:
        """
        Row constant representing a horizontal rule.
        """
        
        pass
    
    MIN_COLUMN_WIDTH = 4  # a single character plus "..."
    
    def __init__(self, headings=None, title=None, footer=None, max_width=FULL_WIDTH, precision=3):
        
        self.headings = [force_str(h) for h in headings] if headings else None
        self.title = RowWrapper(title, 'centre') if title else None
        self.footer = RowWrapper(footer, 'right') if footer else None
        self.precision = precision
        
        self._raw_max_width = max_width
        self._rows = []
    
    def format_value(self, value):
        
        if isinstance(value, bool) or value is None:
            return force_str(value)
        
        if isinstance(value, numbers.Integral):
            return str(value)
        
        if isinstance(value, numbers.Real):
            return '{0:.{1}f}'.format(value, self.precision)
        
        return force_str(value).replace('\n', '\\n').replace('\r', '\\r')
    
    def add_row(self, row):
        
        if row is self.HR:
            self._rows.append(row)
            return
        
        if self.headings and len(row) != len(self.headings):
            raise ValueError('Number of columns in row does not match the headings.')
        
        self._rows.append([(self.format_value(v), isinstance(v, numbers.Number)) for v in row])
    
    def add_rows(self, rows):
        
        for row in rows:
            self.add_row(row)
    
    def add_section(self, heading):
        
        self._rows.append(RowWrapper(heading))
    
    def get_max_width(self):
        
        if self._raw_max_width is self.FULL_WIDTH:
            return shutil.get_terminal_size().columns
        
        return self._raw_max_width
    
    def calculate_widths(self):
        
        data_rows = [r for r in self._rows if isinstance(r, list)]
        column_count = len(self.headings) if self.headings else max((len(r) for r in data_rows), default=0)
        
        widths = [0] * column_count
        if self.headings:
            widths = [len(h) for h in self.headings]
        
        for row in data_rows:
            for i, (value, numeric) in enumerate(row):
                widths[i] = max(widths[i], len(value))
        
        # "| " and " |" at either end plus " | " between columns
        formatting_buffer = 4 + (column_count - 1) * 3
        available = self.get_max_width() - formatting_buffer
        
        floor = sum(min(w, self.MIN_COLUMN_WIDTH) for w in widths)
        if available < floor:
            raise ValueError('Minimum table width exceeds maximum: table cannot be drawn.')
        
        # Narrow the widest column, preferring later columns on ties, until
        # the table fits
        while sum(widths) > available:
            widest = max(range(column_count), key=lambda i: (widths[i], i))
            widths[widest] -= 1
        
        return widths
    
    def _render_cells(self, cells, widths):
        
        rendered = []
        for (value, numeric), width in zip(cells, widths):
            if len(value) > width:
                value = '{0}...'.format(value[:width - 3])
            
            rendered.append(value.rjust(width) if numeric else value.ljust(width))
        
        return '| {0} |'.format(' | '.join(rendered))
    
    def build_table(self):
        
        widths = self.calculate_widths()
        table_width = sum(widths) + 4 + (len(widths) - 1) * 3
        hr = '+{0}+'.format('-' * (table_width - 2))
        
        output = [hr]
        
        if self.title:
            output.extend(self.title.get_rows(table_width))
            output.append(hr)
        
        if self.headings:
            output.append(self._render_cells([(h, False) for h in self.headings], widths))
            output.append(hr)
        
        for row in self._rows:
            if row is self.HR:
                output.append(hr)
            elif isinstance(row, RowWrapper):
                output.extend(row.get_rows(table_width))
            else:
                output.append(self._render_cells(row, widths))
        
        output.append(hr)
        
        if self.footer:
            output.extend(self.footer.get_rows(table_width))
            output.append(hr)
        
        return '\n'.join(output)
    
    def __str__(self):
        
        return self.build_table()
