"""
Module with helper classes for printing progress and status messages
"""


class PrintHelper:
    """
    Helper functions used for printing color-coded progress and status messages.
    """

    OKBLUE = '\033[94m'
    OKGREEN = '\033[32m'
    FAIL = '\033[91m'
    ENDC = '\033[0m'
    BOLD = '\033[1m'

    @classmethod
    def print(cls, text, col, indent=0, indent_step='   '):
        """
        Print color coded, indented text to standard out using Python print

        :param indent_step: String of spaces with the number of spaces per indent step (Default='   ')
        :param indent: Integer indicating the indentation level for the print (Default=0)
        :param text: The text to be printed
        :param col: One of PrintHelper.OKBLUE, OKGREEN, FAIL or BOLD
        """
        indent_str = indent_step * indent
        print(col + indent_str + text + cls.ENDC)

    @staticmethod
    def print_mapping(mapping, depth=0):
        """
        Print a nested mapping, e.g., an experiment configuration, one key per line

        :param mapping: Dict whose values may be dicts themselves
        :param depth: Recursion depth of the print used to indent nested mappings
        """
        for k, v in mapping.items():
            if isinstance(v, dict):
                PrintHelper.print(str(k), PrintHelper.OKBLUE + PrintHelper.BOLD, depth)
                PrintHelper.print_mapping(v, depth=depth+1)
            else:
                PrintHelper.print('%s: %s' % (k, v), PrintHelper.OKBLUE, depth)
