"""
Module with a helper class for building deterministic CSV tables
"""
import math


class CSVTable(object):
    """
    Helper class to generate CSV tables with a header row, ',' delimiter, '.' decimal separator and LF line
    endings. Floats are written with 17 significant digits so that reading a table back is value exact.
    """

    def __init__(self, cols):
        """
        Initialize the CSVTable

        :param cols: List of strings with the column labels
        """
        if len(cols) == 0:
            raise ValueError('A table needs at least one column')
        self.__table = []
        self.__cols = list(cols)
        self.newline = "\n"

    @property
    def columns(self):
        return list(self.__cols)

    def __len__(self):
        return self.num_rows()

    def num_rows(self):
        """
        :return: Number of rows in the table
        """
        return len(self.__table)

    def num_cols(self):
        """
        :return: Number of columns in the table
        """
        return len(self.__cols)

    def add_row(self, row_values, replace_none=''):
        """
        Add a row of values to the table

        :param row_values: List with one value per column, or a dict keyed by the column labels
        :param replace_none: String to be used to replace None values in the row data
        """
        if isinstance(row_values, dict):
            missing = [c for c in self.__cols if c not in row_values]
            if missing:
                raise ValueError('Row is missing the columns %s' % ', '.join(missing))
            row_values = [row_values[c] for c in self.__cols]
        if len(row_values) != len(self.__cols):
            raise ValueError('Expected %i values per row but got %i' % (len(self.__cols), len(row_values)))
        self.__table.append([replace_none if v is None else CSVTable.format_cell(v) for v in row_values])

    def column(self, name, convert=float):
        """
        Values of a column

        :param name: Column label
        :param convert: Callable applied to every cell (default float). None to return the raw strings.
        """
        index = self.__cols.index(name)
        return [row[index] if convert is None else convert(row[index]) for row in self.__table]

    def rows(self):
        """List of dicts, one per row, with the raw cell strings"""
        return [dict(zip(self.__cols, row)) for row in self.__table]

    @staticmethod
    def format_cell(value):
        """
        Convert a single value to its CSV text. Floats use 17 significant digits, booleans are written as
        true/false.

        :raises ValueError: if the text contains the delimiter or a newline
        """
        if isinstance(value, bool):
            text = 'true' if value else 'false'
        elif isinstance(value, float):
            text = 'nan' if math.isnan(value) else '%.17g' % value
        elif hasattr(value, 'item') and not isinstance(value, str):
            return CSVTable.format_cell(value.item())
        else:
            text = str(value)
        if ',' in text or '\n' in text or '\r' in text:
            raise ValueError('CSV cell must not contain delimiters or newlines: %r' % text)
        return text

    def render(self):
        """
        :return: String with the CSV text of the table
        """
        lines = [','.join(self.__cols)] + [','.join(row) for row in self.__table]
        return self.newline.join(lines) + self.newline

    def write(self, path):
        """Write the table to the file at path with LF line endings"""
        with open(path, 'w', newline='') as f:
            f.write(self.render())
        return path

    @classmethod
    def read(cls, path):
        """Read a table previously written with write"""
        with open(path, 'r', newline='') as f:
            lines = f.read().split('\n')
        if not lines or not lines[0]:
            raise ValueError('%s does not contain a CSV header' % path)
        table = cls(lines[0].split(','))
        for line in lines[1:]:
            if line:
                table.__table.append(line.split(','))
        return table
